#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "sonar/rff.hpp"

namespace sonar {

enum class ScheduleKind { Theory, AdaGrad, Bottou };

ScheduleKind schedule_kind_from_string(const std::string& name);
std::string to_string(ScheduleKind kind);

// Learning-rate schedule. Theory: eta_t = 1/(t+1), t counted from the last
// reset. AdaGrad: eta0 / sqrt(1 + sum of squared subgradient norms).
// Bottou: eta0' / (1 + eta0' * t) with eta0' = min(eta0, 0.5).
// AdaGrad/Bottou rates are clipped into (0,1] so the iterate box invariant
// stays provable for the regularized learner.
struct StepSchedule {
    ScheduleKind kind = ScheduleKind::Theory;
    double base_rate = 0.5;
    double grad_sq_sum = 0.0;   // AdaGrad accumulator

    // Rate for the step taken at counter t; AdaGrad folds in the current
    // subgradient's squared norm before emitting the rate.
    double next_rate(long t, double grad_sq_norm);
    void reset() { grad_sq_sum = 0.0; }
};

struct ModelState {
    Eigen::VectorXd w;
    double rho = 0.0;
    long t = 0;                 // steps since last schedule reset
    StepSchedule schedule;

    static ModelState zero(int dim, StepSchedule schedule = {});
    // Throws ConfigError unless ||w0|| <= 1 and |rho0| <= 1.
    static ModelState make(Eigen::VectorXd w0, double rho0, StepSchedule schedule = {});

    void reset_schedule();      // t = 0 and accumulator cleared; (w, rho) kept
};

struct SonarParams {
    double lambda = 0.01;       // anticipated outlier proportion, in [0,1]
    double epsilon = 0.0;       // threshold shrink for classification, in [0,1)

    void validate() const;
};

enum class Decision { Normal, Outlier };

// Outlier iff <w, x> < rho * (1 - epsilon). Pure; no state change.
Decision classify(const ModelState& state, const FeatureVector& x, double epsilon = 0.0);

// rho / ||w||, or nullopt when ||w|| is numerically zero.
std::optional<double> margin(const ModelState& state);

// Throws InputError unless | ||x|| - 1 | <= 1e-6.
void check_unit_norm(const FeatureVector& x);

} // namespace sonar
