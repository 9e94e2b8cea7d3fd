#include "sonar/sonar.hpp"

#include <cassert>
#include <cmath>

#include "sonar/errors.hpp"

namespace sonar {

bool sonar_step(ModelState& state, const FeatureVector& x, const SonarParams& params) {
    check_unit_norm(x);
    params.validate();

    const double score = state.w.dot(x);
    const bool z = score <= state.rho;
    const double zval = z ? 1.0 : 0.0;

    // Full parameter subgradient at the current iterate (feeds AdaGrad).
    const double grad_sq = (state.w - zval * x).squaredNorm() +
                           (state.rho - params.lambda + zval) * (state.rho - params.lambda + zval);
    const double eta = state.schedule.next_rate(state.t, grad_sq);

    state.w = (1.0 - eta) * state.w + (eta * zval) * x;
    state.rho = (1.0 - eta) * state.rho + eta * (params.lambda - zval);
    state.t += 1;

    assert(state.w.norm() <= 1.0 + 1e-9);
    assert(std::abs(state.rho) <= 1.0 + 1e-9);
    return z;
}

TraceRecorder::TraceRecorder(ModelState initial, SonarParams params)
    : state_(std::move(initial)), params_(params) {
    params_.validate();
}

bool TraceRecorder::step(const FeatureVector& x) {
    StepRecord rec;
    rec.w_before = state_.w;
    rec.rho_before = state_.rho;
    rec.t_before = state_.t;
    rec.x = x;
    const double acc_before = state_.schedule.grad_sq_sum;
    rec.z = sonar_step(state_, x, params_);
    // Recover the emitted rate from the accumulator-free kinds directly.
    if (state_.schedule.kind == ScheduleKind::Theory) {
        rec.eta = 1.0 / static_cast<double>(rec.t_before + 1);
    } else {
        StepSchedule probe = state_.schedule;
        probe.grad_sq_sum = acc_before;
        rec.eta = probe.next_rate(rec.t_before, state_.schedule.grad_sq_sum - acc_before);
    }
    records_.push_back(std::move(rec));
    return records_.back().z;
}

namespace {

void require_theory_trace(const std::vector<StepRecord>& trace) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const double expected = 1.0 / static_cast<double>(trace[i].t_before + 1);
        if (std::abs(trace[i].eta - expected) > 1e-15)
            throw ConfigError("replay check requires a theory-schedule trace");
        if (i > 0 && trace[i].t_before != trace[i - 1].t_before + 1)
            throw ConfigError("replay check requires contiguous step counters");
    }
}

} // namespace

double margin_recursion_max_violation(const std::vector<StepRecord>& trace, double lambda) {
    require_theory_trace(trace);
    double worst = 0.0;
    for (const StepRecord& rec : trace) {
        const long t = rec.t_before + 1;  // step index within the schedule
        if (t < 2) continue;              // recursion needs t - 1 >= 1
        const double norm_before = rec.w_before.norm();
        if (norm_before <= 1e-12) continue;

        const double zval = rec.z ? 1.0 : 0.0;
        const double inv = 1.0 / static_cast<double>(t - 1);  // eta/(1-eta) for eta = 1/t
        const Eigen::VectorXd w_shift = rec.w_before + (zval * inv) * rec.x;
        const double norm_shift = w_shift.norm();
        if (norm_shift <= 1e-12) continue;

        const double r_before = rec.rho_before / norm_before;
        const double r_after = (rec.rho_before + (lambda - zval) * inv) / norm_shift;
        const double bound = (lambda - zval * (1.0 + std::abs(r_before))) /
                             (static_cast<double>(t - 1) * norm_shift);
        worst = std::max(worst, bound - (r_after - r_before));
    }
    return worst;
}

double transfer_bound_max_violation(const std::vector<StepRecord>& trace,
                                    const Eigen::VectorXd& w0, double rho0,
                                    long t0, double lambda) {
    require_theory_trace(trace);
    if (t0 < 1) throw InputError("transfer bound requires warm-start counter t0 >= 1");
    double worst = 0.0;
    for (const StepRecord& rec : trace) {
        if (!rec.z) continue;
        const long s = rec.t_before + 1;
        if (s <= t0) throw InputError("trace precedes the warm-start point t0");
        const double bound = rho0 + lambda * static_cast<double>(s - 1 - t0) / static_cast<double>(t0);
        worst = std::max(worst, w0.dot(rec.x) - bound);
    }
    return worst;
}

} // namespace sonar
