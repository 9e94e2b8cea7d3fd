#pragma once

#include <vector>

#include "sonar/model.hpp"

namespace sonar {

// One update of the regularized online learner:
//   Z   = 1{ <w, x> <= rho }                     (decided before the update)
//   w  <- (1 - eta) w + eta * x * Z
//   rho<- (1 - eta) rho + eta * (lambda - Z)
// Returns Z. With eta in (0,1] the iterates stay in {||w||<=1, |rho|<=1}.
bool sonar_step(ModelState& state, const FeatureVector& x, const SonarParams& params);

struct StepRecord {
    Eigen::VectorXd w_before;
    double rho_before = 0.0;
    long t_before = 0;          // schedule counter at decision time
    Eigen::VectorXd x;
    bool z = false;
    double eta = 0.0;
};

// Wraps sonar_step and keeps the per-step records needed by the replay checks.
class TraceRecorder {
public:
    TraceRecorder(ModelState initial, SonarParams params);

    bool step(const FeatureVector& x);

    const std::vector<StepRecord>& records() const { return records_; }
    const ModelState& state() const { return state_; }
    const SonarParams& params() const { return params_; }

private:
    ModelState state_;
    SonarParams params_;
    std::vector<StepRecord> records_;
};

// Replays a theory-schedule trace and checks the per-step margin recursion
//   r_t - r_{t-1} >= (lambda - Z_t (1 + |r_{t-1}|))
//                    / ((t-1) * ||w_{t-1} + Z_t x_t / (t-1)||).
// Returns the largest bound violation over the trace (<= 0 when the bound
// holds everywhere); 0 for an empty trace. Steps with t_before < 1 or a
// zero-norm iterate are outside the recursion's domain and are skipped.
// Throws ConfigError if the trace was not produced under the theory schedule.
double margin_recursion_max_violation(const std::vector<StepRecord>& trace, double lambda);

// Deterministic implication behind the warm-start Type I bound: every point
// flagged at step s of a run warm-started from (w0, rho0) at counter t0 must
// satisfy <w0, x> <= rho0 + lambda * (s - 1 - t0) / t0. Returns the largest
// violation over flagged steps (<= 0 when the bound holds). Requires t0 >= 1
// and a theory-schedule trace.
double transfer_bound_max_violation(const std::vector<StepRecord>& trace,
                                    const Eigen::VectorXd& w0, double rho0,
                                    long t0, double lambda);

} // namespace sonar
