#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace sonar {

enum class Label { Normal, Outlier };

struct StreamEvent {
    Eigen::VectorXd x_raw;
    std::optional<Label> label;
    std::optional<int> phase_id;    // synthetic streams only
    long index = 0;
};

struct GaussianMixture {
    std::vector<Eigen::VectorXd> centers;
    double stddev = 0.3;            // isotropic; 0 degenerates to the centers
};

// Identity-covariance Gaussian rejection-sampled into the unit disk.
struct TruncatedDiskGaussian {
    Eigen::VectorXd center;
};

struct PhaseSpec {
    long length = 1;
    std::variant<GaussianMixture, TruncatedDiskGaussian> distribution;
    std::uint64_t seed = 0;

    void validate() const;
};

std::vector<StreamEvent> generate(const std::vector<PhaseSpec>& phases);

// Named experiment environments. `seed` feeds per-phase RNG seeds and, for
// adversarial10, the per-run draw of mixture centers from [-5,5]^2.
std::vector<PhaseSpec> preset(const std::string& name, std::uint64_t seed = 0);
std::vector<std::string> preset_names();

// First event index of each phase (for the oracle restart runner and metrics).
std::vector<long> phase_starts(const std::vector<PhaseSpec>& phases);

struct CsvOptions {
    std::vector<std::string> feature_columns;   // header names, or numeric indices
    std::optional<std::string> label_column;
    char delimiter = ',';
    std::string outlier_value = "1";
    std::string normal_value = "0";
};

// Streams rows in file order. Header row required; an empty file yields an
// empty stream. Row-level problems raise DataError naming the row.
std::vector<StreamEvent> ingest_csv(const std::string& path, const CsvOptions& options);

// Synthetic streams exported to the same CSV schema ingest_csv reads.
void write_stream_csv(const std::string& path, const std::vector<StreamEvent>& events);

// Welford running mean/variance standardizer. Inclusive mode updates with the
// incoming point before transforming it (first point maps to zero); the
// exclusive variant transforms with the statistics of the prefix only.
class RunningStandardizer {
public:
    explicit RunningStandardizer(double variance_floor = 1e-12, bool inclusive = true);

    Eigen::VectorXd push(const Eigen::VectorXd& x);
    // Transform with the current statistics without folding the point in.
    Eigen::VectorXd peek(const Eigen::VectorXd& x) const;

    long count() const { return count_; }
    Eigen::VectorXd mean() const;
    Eigen::VectorXd variance() const;   // population (M2 / n), floored

private:
    void update(const Eigen::VectorXd& x);
    Eigen::VectorXd transform(const Eigen::VectorXd& x) const;

    double variance_floor_;
    bool inclusive_;
    long count_ = 0;
    Eigen::VectorXd mean_;
    Eigen::VectorXd m2_;
};

} // namespace sonar
