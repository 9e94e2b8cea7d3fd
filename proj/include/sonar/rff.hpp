#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace sonar {

// An embedded point; unit Euclidean norm by construction (sin/cos pairs).
using FeatureVector = Eigen::VectorXd;

struct RffConfig {
    double gamma = 0.5;        // RBF bandwidth in K(x,y) = exp(-gamma * ||x-y||^2)
    int num_pairs = 1;         // d sin/cos pairs -> feature dimension 2d
    int input_dim = 1;         // D
    std::uint64_t seed = 0;

    void validate() const;     // throws ConfigError
};

// Frozen random frequency bank. Immutable after sampling, shareable across threads.
class RffMap {
public:
    const Eigen::MatrixXd& omegas() const { return omegas_; }
    const RffConfig& config() const { return config_; }
    int feature_dim() const { return 2 * config_.num_pairs; }

    // z(x) = (1/sqrt(d)) * (sin(w_1.x), cos(w_1.x), ..., sin(w_d.x), cos(w_d.x)).
    // Unit norm by the sin^2+cos^2 identity; z(x).z(y) = (1/d) sum_j cos(w_j.(x-y)).
    FeatureVector embed(const Eigen::Ref<const Eigen::VectorXd>& x) const;

private:
    friend RffMap sample_rff(const RffConfig& config);
    Eigen::MatrixXd omegas_;   // d x D, rows i.i.d. N(0, 2*gamma*I)
    RffConfig config_;
};

RffMap sample_rff(const RffConfig& config);

FeatureVector embed(const RffMap& map, const Eigen::Ref<const Eigen::VectorXd>& x);

// exp(-gamma * ||x-y||^2); the kernel the map approximates.
double kernel_exact(const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& y, double gamma);

// ceil(c * (D / r_min^2) * ln(D / (delta * r_min^2))): pairs needed so the
// worst-case kernel approximation error stays below r_min/2 with prob 1-delta.
int recommended_feature_count(int input_dim, double r_min, double delta, double c = 1.0);

} // namespace sonar
