#include "sonar/sgd_ocsvm.hpp"

#include <cmath>
#include <sstream>

#include "sonar/errors.hpp"

namespace sonar {

bool ocsvm_step(ModelState& state, const FeatureVector& x, const SonarParams& params) {
    check_unit_norm(x);
    params.validate();

    const bool z = state.rho >= state.w.dot(x);
    const double zval = z ? 1.0 : 0.0;

    const Eigen::VectorXd grad_w = params.lambda * state.w - zval * x;
    const double grad_rho = -params.lambda + zval;
    const double grad_sq = grad_w.squaredNorm() + grad_rho * grad_rho;
    const double eta = state.schedule.next_rate(state.t, grad_sq);

    state.w -= eta * grad_w;
    state.rho -= eta * grad_rho;
    state.t += 1;

    const double norm = state.w.norm();
    if (norm > 10.0) {
        std::ostringstream msg;
        msg << "sgd_ocsvm: ||w|| = " << norm << " at step " << state.t
            << " (lambda = " << params.lambda << ", eta = " << eta << ")";
        throw DivergenceError(msg.str());
    }
    return z;
}

} // namespace sonar
