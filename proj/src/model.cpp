#include "sonar/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sonar/errors.hpp"

namespace sonar {

ScheduleKind schedule_kind_from_string(const std::string& name) {
    if (name == "theory") return ScheduleKind::Theory;
    if (name == "adagrad") return ScheduleKind::AdaGrad;
    if (name == "bottou") return ScheduleKind::Bottou;
    throw ConfigError("unknown schedule kind '" + name + "' (expected theory|adagrad|bottou)");
}

std::string to_string(ScheduleKind kind) {
    switch (kind) {
    case ScheduleKind::Theory: return "theory";
    case ScheduleKind::AdaGrad: return "adagrad";
    case ScheduleKind::Bottou: return "bottou";
    }
    return "theory";
}

double StepSchedule::next_rate(long t, double grad_sq_norm) {
    switch (kind) {
    case ScheduleKind::Theory:
        return 1.0 / static_cast<double>(t + 1);
    case ScheduleKind::AdaGrad: {
        grad_sq_sum += grad_sq_norm;
        const double eta = base_rate / std::sqrt(1.0 + grad_sq_sum);
        return std::clamp(eta, 1e-12, 1.0);
    }
    case ScheduleKind::Bottou: {
        const double eta0 = std::min(base_rate, 0.5);
        const double eta = eta0 / (1.0 + eta0 * static_cast<double>(t));
        return std::clamp(eta, 1e-12, 1.0);
    }
    }
    return 1.0;
}

ModelState ModelState::zero(int dim, StepSchedule schedule) {
    ModelState s;
    s.w = Eigen::VectorXd::Zero(dim);
    s.rho = 0.0;
    s.t = 0;
    s.schedule = schedule;
    return s;
}

ModelState ModelState::make(Eigen::VectorXd w0, double rho0, StepSchedule schedule) {
    if (w0.norm() > 1.0 + 1e-12)
        throw ConfigError("initial w must satisfy ||w|| <= 1");
    if (std::abs(rho0) > 1.0 + 1e-12)
        throw ConfigError("initial rho must satisfy |rho| <= 1");
    ModelState s;
    s.w = std::move(w0);
    s.rho = rho0;
    s.t = 0;
    s.schedule = schedule;
    return s;
}

void ModelState::reset_schedule() {
    t = 0;
    schedule.reset();
}

void SonarParams::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("lambda must lie in [0,1]");
    if (!(epsilon >= 0.0 && epsilon < 1.0))
        throw ConfigError("epsilon must lie in [0,1)");
}

Decision classify(const ModelState& state, const FeatureVector& x, double epsilon) {
    check_unit_norm(x);
    const double score = state.w.dot(x);
    return score < state.rho * (1.0 - epsilon) ? Decision::Outlier : Decision::Normal;
}

std::optional<double> margin(const ModelState& state) {
    const double norm = state.w.norm();
    if (norm <= 1e-12) return std::nullopt;
    return state.rho / norm;
}

void check_unit_norm(const FeatureVector& x) {
    const double norm = x.norm();
    if (std::abs(norm - 1.0) > 1e-6) {
        std::ostringstream msg;
        msg << "feature vector must be unit norm, got ||x|| = " << norm;
        throw InputError(msg.str());
    }
}

} // namespace sonar
