#pragma once

#include <optional>
#include <vector>

#include "sonar/model.hpp"
#include "sonar/sonar.hpp"

namespace sonar {

struct CpdConfig {
    long horizon = 2;               // T
    double lambda = 0.01;
    double delta = 0.01;            // error control in the threshold's log(1/delta)
    double threshold = 1.0;         // C
    // Reference iterate for the discrepancy test: the main learner (default)
    // or the slowest base's current iterate.
    bool compare_slowest_base = false;
    // Optional heuristic-schedule main used for decisions/metrics. By default
    // it also feeds the test statistic: a 1/t main barely moves late in a
    // run, so its distance to fresh snapshots stays under the small-scale
    // noise floor and changes go unseen. Set shadow_theory_statistic to keep
    // a shadow 1/t main on the statistic instead.
    std::optional<StepSchedule> metrics_schedule;
    bool shadow_theory_statistic = false;
    // Base learners default to the theory schedule (the threshold shape is
    // calibrated to its convergence rate); optionally run them on another.
    std::optional<StepSchedule> base_schedule;

    void validate() const;
};

struct CpdStepResult {
    bool flagged = false;           // decision learner's Z before its update
    bool restarted = false;
};

// A main learner plus dyadic-frequency base learners. Base m resets its
// learning rate every 2^m steps and freezes the iterate it reached at the
// boundary; a restart is declared when the main iterate drifts from a frozen
// snapshot by more than C * log(T) * log(1/delta) / 2^m in squared distance,
// checked only once the run is at least 2^m steps old. A restart rebuilds the
// whole ensemble with the remaining horizon.
class CpdEnsemble {
public:
    CpdEnsemble(int dim, const CpdConfig& config);

    CpdStepResult step(const FeatureVector& x);

    // State used for classification/metrics (the heuristic main if configured).
    const ModelState& decision_state() const;
    // State feeding the test statistic.
    const ModelState& main_state() const { return main_; }

    const std::vector<long>& restart_log() const { return restart_log_; }
    // Squared distances per scale from the last step; NaN where ungated.
    const std::vector<double>& last_stats() const { return last_stats_; }
    std::vector<double> thresholds() const;
    int num_scales() const { return static_cast<int>(bases_.size()); }
    long steps_total() const { return t_global_; }
    long steps_since_restart() const { return t_run_; }
    long current_horizon() const { return horizon_current_; }

private:
    struct BaseLearner {
        long period = 2;            // 2^m
        ModelState state;
        long in_window = 0;
        bool has_snapshot = false;
        Eigen::VectorXd snap_w;
        double snap_rho = 0.0;
    };

    void rebuild(long horizon);
    const ModelState& reference_state() const;

    CpdConfig config_;
    int dim_ = 0;
    ModelState main_;
    std::optional<ModelState> metrics_main_;
    std::vector<BaseLearner> bases_;
    long t_run_ = 0;
    long t_global_ = 0;
    long horizon_current_ = 0;
    std::vector<long> restart_log_;
    std::vector<double> last_stats_;
};

enum class TuneMode {
    SmallestSafe,      // smallest grid value that never triggers on the streams
    LargestDetecting,  // largest grid value that triggers at least once
};

// Selects a threshold from an ascending grid. A value triggers on a stream
// iff it is at most the stream's peak stat-to-scale ratio (the trajectory up
// to the first trigger does not depend on C), so one untriggered pass per
// stream decides the whole grid. Throws TuningError listing trigger counts
// when no grid value qualifies.
double tune_threshold(const std::vector<std::vector<FeatureVector>>& streams,
                      const CpdConfig& config_template, const std::vector<double>& grid,
                      TuneMode mode = TuneMode::SmallestSafe);

// Peak over steps and scales of stat / (log(T) log(1/delta) / 2^m) on one
// untriggered pass; a threshold avoids restarts on the stream iff it exceeds
// this.
double max_stat_ratio(const std::vector<FeatureVector>& stream, const CpdConfig& config_template);

// Restart counts per grid value by full reruns (diagnostics; summed over
// streams).
std::vector<long> threshold_trigger_counts(
    const std::vector<std::vector<FeatureVector>>& streams,
    const CpdConfig& config_template, const std::vector<double>& grid);

} // namespace sonar
