#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sonar/metrics.hpp"
#include "sonar/model.hpp"
#include "sonar/rff.hpp"
#include "sonar/sonarc.hpp"
#include "sonar/streams.hpp"

namespace sonar {

struct ScheduleConfig {
    std::string kind = "theory";
    double base_rate = 0.5;

    StepSchedule make() const;
};

struct RffSettings {
    double gamma = 0.5;
    double r_min = 0.5;
    double delta = 0.005;          // lambda/2 under the default lambda
    int explicit_pairs = 0;        // 0: derive from recommended_feature_count
    double bound_constant = 1.0;
};

struct SourceConfig {
    std::string preset_name = "stationary2";   // empty when reading a CSV
    std::string csv_path;
    CsvOptions csv;
    bool standardize = false;                  // the CLI defaults this on for CSV sources
    bool standardizer_skips_outliers = false;
    bool exclusive_standardizer = false;
};

struct CpdSettings {
    double threshold = 0.0;        // <= 0: tune on stationary streams first
    std::vector<double> grid;      // ascending; filled with the default decade grid at resolve
    double delta = 0.01;
    long horizon = 0;              // 0: stream length
    std::string tune_mode = "smallest-safe";   // or "largest-detecting"
    int tune_streams = 5;
    bool compare_slowest_base = false;
    // Under a heuristic run schedule the whole ensemble (main, bases, test
    // statistic) follows it; this restores a shadow 1/t main on the statistic.
    bool shadow_theory_statistic = false;
};

struct RunConfig {
    std::string algorithm = "sonar";   // sonar | sgd_ocsvm | sonarc | oracle_restart
    double lambda = 0.01;
    double epsilon = 0.0;
    ScheduleConfig schedule;
    RffSettings rff;
    SourceConfig source;
    int runs = 20;
    std::uint64_t seed = 1;
    int workers = 1;
    std::string output_dir;            // empty: no files written
    CpdSettings cpd;
    int smooth_window = 200;
    bool record_cpd_stats = false;
    bool save_final_snapshot = false;
    bool offline_eval_at_end = false;  // needs a labeled source
    // Which iterate the online error metric reads: "pre" evaluates the point
    // against the state before its update (the default), "post" against the
    // state after it (the indexing the mistake-count formula is written in).
    std::string metric_decision = "pre";
};

// lambda=0.01, gamma=0.5, r_min=0.5, delta=lambda/2, derived feature count,
// epsilon=0, 20 runs.
RunConfig default_run_config();
std::vector<double> default_threshold_grid();

// Field-level validation of everything reachable from the config surface.
void validate_config(const RunConfig& config);

struct RepResult {
    MetricTrace trace;
    std::vector<long> restarts;
    ModelState final_state;
    RffConfig rff_config;
    std::uint64_t rep_seed = 0;
    std::uint64_t stream_seed = 0;
    std::optional<OfflineEval> offline;
};

struct ExperimentResult {
    std::vector<RepResult> reps;
    AggregateTrace aggregate;
    double cpd_threshold = 0.0;        // resolved value (sonarc only)
    int rff_pairs = 0;
    int input_dim = 0;
    long stream_length = 0;
    std::string manifest_json;
};

ExperimentResult run_experiment(const RunConfig& config);

// Round-trip used by `run --manifest-in`: a manifest embeds the full resolved
// config, so a run is reproducible from the manifest alone.
std::string config_to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& text);
RunConfig config_from_manifest(const std::string& manifest_json);

// Single-stream primitives (shared by the experiment loop and tests).

// Embeds raw events in order; no standardization.
std::vector<FeatureVector> embed_all(const std::vector<StreamEvent>& events, const RffMap& map);

// Plain online pass of one learner over pre-embedded points (all-normal).
MetricTrace sonar_trace(const std::vector<FeatureVector>& xs, const SonarParams& params,
                        const StepSchedule& schedule, ModelState* final_state = nullptr);

// The oracle restarting variant: schedule counter reset exactly at the given
// step indices (applied before that step's update).
MetricTrace oracle_restart_trace(const std::vector<FeatureVector>& xs, const SonarParams& params,
                                 const StepSchedule& schedule,
                                 const std::vector<long>& restart_indices,
                                 ModelState* final_state = nullptr);

// 2-D acceptance-region utilities (raw-space grid pushed through the map).
struct GridSpec {
    double x_min = -4.0, x_max = 4.0;
    double y_min = -4.0, y_max = 4.0;
    int resolution = 50;
};
double grid_disagreement(const ModelState& a, const ModelState& b, const RffMap& map,
                         const GridSpec& grid, double epsilon = 0.0);
void write_grid_csv(const std::string& path, const ModelState& state, const RffMap& map,
                    const GridSpec& grid, double epsilon = 0.0);

} // namespace sonar
