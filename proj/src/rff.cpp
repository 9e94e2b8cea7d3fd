#include "sonar/rff.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "sonar/errors.hpp"

namespace sonar {

void RffConfig::validate() const {
    if (!(gamma > 0.0)) throw ConfigError("rff: gamma must be positive");
    if (num_pairs < 1) throw ConfigError("rff: num_pairs must be >= 1");
    if (input_dim < 1) throw ConfigError("rff: input_dim must be >= 1");
}

RffMap sample_rff(const RffConfig& config) {
    config.validate();
    RffMap map;
    map.config_ = config;
    map.omegas_.resize(config.num_pairs, config.input_dim);

    // Fourier transform of exp(-gamma ||.||^2) is N(0, 2*gamma*I).
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 * config.gamma));
    for (int j = 0; j < config.num_pairs; ++j)
        for (int k = 0; k < config.input_dim; ++k)
            map.omegas_(j, k) = gauss(rng);
    return map;
}

FeatureVector RffMap::embed(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != config_.input_dim) {
        std::ostringstream msg;
        msg << "rff: point has dimension " << x.size() << ", map expects " << config_.input_dim;
        throw InputError(msg.str());
    }
    const int d = config_.num_pairs;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Eigen::VectorXd proj = omegas_ * x;
    FeatureVector z(2 * d);
    for (int j = 0; j < d; ++j) {
        z(2 * j) = scale * std::sin(proj(j));
        z(2 * j + 1) = scale * std::cos(proj(j));
    }
    return z;
}

FeatureVector embed(const RffMap& map, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return map.embed(x);
}

double kernel_exact(const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& y, double gamma) {
    if (x.size() != y.size()) throw InputError("kernel_exact: dimension mismatch");
    return std::exp(-gamma * (x - y).squaredNorm());
}

int recommended_feature_count(int input_dim, double r_min, double delta, double c) {
    if (input_dim < 1) throw ConfigError("recommended_feature_count: input_dim must be >= 1");
    if (!(r_min > 0.0 && r_min < 1.0))
        throw ConfigError("recommended_feature_count: r_min must lie in (0,1)");
    if (!(delta > 0.0 && delta < 1.0))
        throw ConfigError("recommended_feature_count: delta must lie in (0,1)");
    if (!(c > 0.0)) throw ConfigError("recommended_feature_count: constant must be positive");

    const double r2 = r_min * r_min;
    const double value = c * (input_dim / r2) * std::log(input_dim / (delta * r2));
    return static_cast<int>(std::ceil(value));
}

} // namespace sonar
