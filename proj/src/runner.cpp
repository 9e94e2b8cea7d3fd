#include "sonar/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sonar/errors.hpp"
#include "sonar/rng.hpp"
#include "sonar/sgd_ocsvm.hpp"
#include "sonar/snapshot.hpp"
#include "sonar/sonar.hpp"

namespace sonar {

namespace {

constexpr const char* kToolVersion = "0.1.0";

const std::set<std::string>& known_algorithms() {
    static const std::set<std::string> algos = {"sonar", "sgd_ocsvm", "sonarc", "oracle_restart"};
    return algos;
}

} // namespace

StepSchedule ScheduleConfig::make() const {
    StepSchedule s;
    s.kind = schedule_kind_from_string(kind);
    s.base_rate = base_rate;
    return s;
}

std::vector<double> default_threshold_grid() {
    std::vector<double> grid;
    for (int n = -8; n <= 3; ++n) grid.push_back(std::pow(10.0, n));
    return grid;
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.lambda = 0.01;
    cfg.epsilon = 0.0;
    cfg.rff.gamma = 0.5;
    cfg.rff.r_min = 0.5;
    cfg.rff.delta = cfg.lambda / 2.0;
    cfg.runs = 20;
    cfg.cpd.grid = default_threshold_grid();
    return cfg;
}

void validate_config(const RunConfig& cfg) {
    if (!known_algorithms().count(cfg.algorithm))
        throw ConfigError("algorithm: unknown '" + cfg.algorithm +
                          "' (expected sonar|sgd_ocsvm|sonarc|oracle_restart)");
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("lambda: must lie in [0,1]");
    if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0)) throw ConfigError("epsilon: must lie in [0,1)");
    schedule_kind_from_string(cfg.schedule.kind);
    if (!(cfg.schedule.base_rate > 0.0)) throw ConfigError("schedule.base_rate: must be positive");
    if (!(cfg.rff.gamma > 0.0)) throw ConfigError("rff.gamma: must be positive");
    if (!(cfg.rff.r_min > 0.0 && cfg.rff.r_min < 1.0))
        throw ConfigError("rff.r_min: must lie in (0,1)");
    if (!(cfg.rff.delta > 0.0 && cfg.rff.delta < 1.0))
        throw ConfigError("rff.delta: must lie in (0,1)");
    if (cfg.rff.explicit_pairs < 0) throw ConfigError("rff.pairs: must be nonnegative");
    if (!(cfg.rff.bound_constant > 0.0)) throw ConfigError("rff.constant: must be positive");
    if (cfg.runs < 1) throw ConfigError("runs: must be >= 1");
    if (cfg.workers < 1) throw ConfigError("workers: must be >= 1");
    if (cfg.smooth_window < 1) throw ConfigError("smooth_window: must be >= 1");
    if (cfg.metric_decision != "pre" && cfg.metric_decision != "post")
        throw ConfigError("metric_decision: expected pre|post");

    const bool has_preset = !cfg.source.preset_name.empty();
    const bool has_csv = !cfg.source.csv_path.empty();
    if (!has_preset && !has_csv) throw ConfigError("source: needs a preset name or a csv path");
    if (has_preset && !has_csv) {
        const auto names = preset_names();
        if (std::find(names.begin(), names.end(), cfg.source.preset_name) == names.end()) {
            std::ostringstream msg;
            msg << "source.preset: unknown '" << cfg.source.preset_name << "'; available:";
            for (const auto& n : names) msg << " " << n;
            throw ConfigError(msg.str());
        }
    }
    if (cfg.algorithm == "oracle_restart" && !has_preset)
        throw ConfigError("oracle_restart: needs a synthetic preset (changepoints must be known)");
    if (cfg.offline_eval_at_end && !(has_csv && cfg.source.csv.label_column))
        throw ConfigError("offline eval: needs a labeled csv source");

    if (cfg.algorithm == "sonarc") {
        if (!(cfg.cpd.delta > 0.0 && cfg.cpd.delta < 1.0))
            throw ConfigError("cpd.delta: must lie in (0,1)");
        if (cfg.cpd.threshold <= 0.0) {
            if (cfg.cpd.grid.empty()) throw ConfigError("cpd: needs a threshold or a tuning grid");
            if (!has_preset)
                throw ConfigError("cpd: tuning needs a synthetic preset; csv runs need an "
                                  "explicit threshold");
            if (cfg.cpd.tune_streams < 1) throw ConfigError("cpd.tune_streams: must be >= 1");
            if (cfg.cpd.tune_mode != "smallest-safe" && cfg.cpd.tune_mode != "largest-detecting")
                throw ConfigError("cpd.tune_mode: expected smallest-safe|largest-detecting");
        }
        if (cfg.cpd.horizon < 0) throw ConfigError("cpd.horizon: must be nonnegative");
    }
}

std::vector<FeatureVector> embed_all(const std::vector<StreamEvent>& events, const RffMap& map) {
    std::vector<FeatureVector> out;
    out.reserve(events.size());
    for (const auto& ev : events) out.push_back(map.embed(ev.x_raw));
    return out;
}

MetricTrace sonar_trace(const std::vector<FeatureVector>& xs, const SonarParams& params,
                        const StepSchedule& schedule, ModelState* final_state) {
    return oracle_restart_trace(xs, params, schedule, {}, final_state);
}

MetricTrace oracle_restart_trace(const std::vector<FeatureVector>& xs, const SonarParams& params,
                                 const StepSchedule& schedule,
                                 const std::vector<long>& restart_indices,
                                 ModelState* final_state) {
    for (long idx : restart_indices)
        if (idx < 0 || idx >= static_cast<long>(xs.size()))
            throw InputError("oracle restart: changepoint index out of range");
    std::set<long> resets(restart_indices.begin(), restart_indices.end());

    MetricTrace trace;
    if (xs.empty()) return trace;
    ModelState state = ModelState::zero(static_cast<int>(xs.front().size()), schedule);
    for (long i = 0; i < static_cast<long>(xs.size()); ++i) {
        if (resets.count(i)) state.reset_schedule();
        const Decision decision = classify(state, xs[i], params.epsilon);
        sonar_step(state, xs[i], params);
        StreamEvent ev;
        ev.index = i;
        trace.record(ev, decision, margin(state), false);
    }
    if (final_state) *final_state = state;
    return trace;
}

double grid_disagreement(const ModelState& a, const ModelState& b, const RffMap& map,
                         const GridSpec& grid, double epsilon) {
    if (map.config().input_dim != 2) throw InputError("grid comparison needs 2-D raw space");
    if (grid.resolution < 2) throw ConfigError("grid.resolution: must be >= 2");
    long differ = 0;
    Eigen::VectorXd x(2);
    for (int i = 0; i < grid.resolution; ++i) {
        for (int j = 0; j < grid.resolution; ++j) {
            x(0) = grid.x_min + (grid.x_max - grid.x_min) * i / (grid.resolution - 1);
            x(1) = grid.y_min + (grid.y_max - grid.y_min) * j / (grid.resolution - 1);
            const FeatureVector z = map.embed(x);
            if (classify(a, z, epsilon) != classify(b, z, epsilon)) ++differ;
        }
    }
    return static_cast<double>(differ) /
           (static_cast<double>(grid.resolution) * grid.resolution);
}

void write_grid_csv(const std::string& path, const ModelState& state, const RffMap& map,
                    const GridSpec& grid, double epsilon) {
    if (map.config().input_dim != 2) throw InputError("grid export needs 2-D raw space");
    if (grid.resolution < 2) throw ConfigError("grid.resolution: must be >= 2");
    std::ofstream out(path);
    if (!out) throw DataError("grid export: cannot write '" + path + "'");
    out << "x0,x1,score,accepted\n";
    char buf[64];
    Eigen::VectorXd x(2);
    for (int i = 0; i < grid.resolution; ++i) {
        for (int j = 0; j < grid.resolution; ++j) {
            x(0) = grid.x_min + (grid.x_max - grid.x_min) * i / (grid.resolution - 1);
            x(1) = grid.y_min + (grid.y_max - grid.y_min) * j / (grid.resolution - 1);
            const FeatureVector z = map.embed(x);
            const double score = state.w.dot(z);
            std::snprintf(buf, sizeof(buf), "%.17g", x(0));
            out << buf << ",";
            std::snprintf(buf, sizeof(buf), "%.17g", x(1));
            out << buf << ",";
            std::snprintf(buf, sizeof(buf), "%.17g", score);
            out << buf << "," << (classify(state, z, epsilon) == Decision::Normal ? 1 : 0)
                << "\n";
        }
    }
}

namespace {

// Data presets layered on csv sources (per-dataset lambda conventions).
void apply_data_preset(RunConfig& cfg) {
    if (cfg.source.preset_name == "skab") {
        if (cfg.source.csv_path.empty()) throw ConfigError("skab preset needs --csv <file>");
        if (cfg.lambda == default_run_config().lambda) cfg.lambda = 0.005;
        if (!cfg.source.csv.label_column) cfg.source.csv.label_column = "anomaly";
        cfg.source.standardize = true;
        cfg.source.preset_name.clear();
    } else if (cfg.source.preset_name == "iot23") {
        if (cfg.source.csv_path.empty()) throw ConfigError("iot23 preset needs --csv <file>");
        if (cfg.lambda == default_run_config().lambda) cfg.lambda = 0.1;
        cfg.source.standardize = true;
        cfg.source.preset_name.clear();
    }
}

struct ResolvedSource {
    std::vector<StreamEvent> csv_events;   // shared across reps for csv sources
    bool synthetic = false;
    int input_dim = 0;
    long length = 0;
};

ResolvedSource resolve_source(const RunConfig& cfg) {
    ResolvedSource src;
    if (!cfg.source.csv_path.empty()) {
        src.csv_events = ingest_csv(cfg.source.csv_path, cfg.source.csv);
        if (src.csv_events.empty()) throw DataError("source: csv stream is empty");
        src.input_dim = static_cast<int>(src.csv_events.front().x_raw.size());
        src.length = static_cast<long>(src.csv_events.size());
    } else {
        src.synthetic = true;
        const auto phases = preset(cfg.source.preset_name, cfg.seed);
        src.length = 0;
        for (const auto& p : phases) src.length += p.length;
        src.input_dim = 2;
    }
    return src;
}

struct RepContext {
    const RunConfig& cfg;
    const ResolvedSource& src;
    int pairs;
    double cpd_threshold;
};

CpdConfig make_cpd_config(const RunConfig& cfg, long stream_length) {
    CpdConfig cpd;
    cpd.horizon = std::max<long>(cfg.cpd.horizon > 0 ? cfg.cpd.horizon : stream_length, 2);
    cpd.lambda = cfg.lambda;
    cpd.delta = cfg.cpd.delta;
    cpd.compare_slowest_base = cfg.cpd.compare_slowest_base;
    cpd.shadow_theory_statistic = cfg.cpd.shadow_theory_statistic;
    if (cfg.schedule.kind != "theory") {
        cpd.metrics_schedule = cfg.schedule.make();
        // Shadow mode keeps the statistic on a 1/t main with 1/t bases (the
        // rate the threshold shape is calibrated to); otherwise the whole
        // ensemble follows the run schedule.
        if (!cfg.cpd.shadow_theory_statistic) cpd.base_schedule = cfg.schedule.make();
    }
    return cpd;
}

RepResult run_one_rep(const RepContext& ctx, int rep) {
    const RunConfig& cfg = ctx.cfg;
    RepResult result;
    result.rep_seed = mix_seed(cfg.seed, 0x9e0 + rep);
    result.stream_seed = mix_seed(result.rep_seed, 0x57ea);
    const std::uint64_t rff_seed = mix_seed(result.rep_seed, 0xfea7);

    std::vector<StreamEvent> synthetic_events;
    const std::vector<StreamEvent>* events = &ctx.src.csv_events;
    std::vector<long> restarts_at;
    if (ctx.src.synthetic) {
        const auto phases = preset(cfg.source.preset_name, result.stream_seed);
        synthetic_events = generate(phases);
        events = &synthetic_events;
        const auto starts = phase_starts(phases);
        restarts_at.assign(starts.begin() + 1, starts.end());   // skip phase 0
    }

    RffConfig rff_cfg;
    rff_cfg.gamma = cfg.rff.gamma;
    rff_cfg.num_pairs = ctx.pairs;
    rff_cfg.input_dim = ctx.src.input_dim;
    rff_cfg.seed = rff_seed;
    const RffMap map = sample_rff(rff_cfg);
    result.rff_config = rff_cfg;

    SonarParams params;
    params.lambda = cfg.lambda;
    params.epsilon = cfg.epsilon;

    const bool is_sonarc = cfg.algorithm == "sonarc";
    const bool is_ocsvm = cfg.algorithm == "sgd_ocsvm";
    const bool is_oracle = cfg.algorithm == "oracle_restart";

    std::optional<CpdEnsemble> ensemble;
    ModelState state = ModelState::zero(map.feature_dim(), cfg.schedule.make());
    if (is_sonarc) {
        CpdConfig cpd = make_cpd_config(cfg, ctx.src.length);
        cpd.threshold = ctx.cpd_threshold;
        ensemble.emplace(map.feature_dim(), cpd);
    }

    std::set<long> reset_set(restarts_at.begin(), restarts_at.end());
    std::optional<RunningStandardizer> standardizer;
    if (cfg.source.standardize)
        standardizer.emplace(1e-12, !cfg.source.exclusive_standardizer);

    std::vector<std::pair<FeatureVector, Label>> labeled;
    MetricTrace& trace = result.trace;

    for (const StreamEvent& ev : *events) {
        const bool labeled_outlier = ev.label && *ev.label == Label::Outlier;
        Eigen::VectorXd x = ev.x_raw;
        if (standardizer) {
            if (labeled_outlier && cfg.source.standardizer_skips_outliers)
                x = standardizer->peek(x);
            else
                x = standardizer->push(x);
        }
        const FeatureVector z = map.embed(x);

        const ModelState& decision_state = is_sonarc ? ensemble->decision_state() : state;
        Decision decision = classify(decision_state, z, cfg.epsilon);

        bool restarted = false;
        if (!labeled_outlier) {   // labeled outliers are never trained on
            if (is_sonarc) {
                restarted = ensemble->step(z).restarted;
            } else if (is_ocsvm) {
                ocsvm_step(state, z, params);
            } else {
                if (is_oracle && reset_set.count(ev.index)) state.reset_schedule();
                sonar_step(state, z, params);
            }
        }

        const ModelState& post_state = is_sonarc ? ensemble->decision_state() : state;
        if (cfg.metric_decision == "post") decision = classify(post_state, z, cfg.epsilon);
        const std::vector<double>* cpd_stats =
            (is_sonarc && cfg.record_cpd_stats) ? &ensemble->last_stats() : nullptr;
        trace.record(ev, decision, margin(post_state), restarted, cpd_stats);

        if (cfg.offline_eval_at_end && ev.label) labeled.emplace_back(z, *ev.label);
    }

    result.final_state = is_sonarc ? ensemble->decision_state() : state;
    if (is_sonarc) result.restarts = ensemble->restart_log();
    if (cfg.offline_eval_at_end && !labeled.empty())
        result.offline = offline_eval(result.final_state, labeled, cfg.epsilon);
    return result;
}

double tune_cpd_threshold(const RunConfig& cfg, const ResolvedSource& src, int pairs) {
    // Stationary tuning streams drawn from the preset's own phase
    // distributions (fresh seeds, full run length so every dyadic scale is
    // exercised).
    std::vector<std::vector<FeatureVector>> streams;
    for (int k = 0; k < cfg.cpd.tune_streams; ++k) {
        const std::uint64_t tune_seed = mix_seed(cfg.seed, 0x7e4e00 + k);
        auto phases = preset(cfg.source.preset_name, tune_seed);
        PhaseSpec phase = phases[k % phases.size()];
        phase.length = std::max<long>(cfg.cpd.horizon > 0 ? cfg.cpd.horizon : src.length, 2);
        phase.seed = mix_seed(tune_seed, 0x1);

        RffConfig rff_cfg;
        rff_cfg.gamma = cfg.rff.gamma;
        rff_cfg.num_pairs = pairs;
        rff_cfg.input_dim = src.input_dim;
        rff_cfg.seed = mix_seed(tune_seed, 0x2);
        const RffMap map = sample_rff(rff_cfg);
        streams.push_back(embed_all(generate({phase}), map));
    }

    const CpdConfig tmpl = make_cpd_config(cfg, src.length);
    const TuneMode mode = cfg.cpd.tune_mode == "largest-detecting" ? TuneMode::LargestDetecting
                                                                   : TuneMode::SmallestSafe;
    return tune_threshold(streams, tmpl, cfg.cpd.grid, mode);
}

nlohmann::ordered_json schedule_json(const ScheduleConfig& s) {
    return {{"kind", s.kind}, {"base_rate", s.base_rate}};
}

} // namespace

std::string config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["algorithm"] = cfg.algorithm;
    j["lambda"] = cfg.lambda;
    j["epsilon"] = cfg.epsilon;
    j["schedule"] = schedule_json(cfg.schedule);
    j["rff"] = {{"gamma", cfg.rff.gamma},
                {"r_min", cfg.rff.r_min},
                {"delta", cfg.rff.delta},
                {"explicit_pairs", cfg.rff.explicit_pairs},
                {"bound_constant", cfg.rff.bound_constant}};
    j["source"] = {{"preset", cfg.source.preset_name},
                   {"csv_path", cfg.source.csv_path},
                   {"feature_columns", cfg.source.csv.feature_columns},
                   {"label_column",
                    cfg.source.csv.label_column ? *cfg.source.csv.label_column : ""},
                   {"delimiter", std::string(1, cfg.source.csv.delimiter)},
                   {"outlier_value", cfg.source.csv.outlier_value},
                   {"normal_value", cfg.source.csv.normal_value},
                   {"standardize", cfg.source.standardize},
                   {"standardizer_skips_outliers", cfg.source.standardizer_skips_outliers},
                   {"exclusive_standardizer", cfg.source.exclusive_standardizer}};
    j["runs"] = cfg.runs;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["output_dir"] = cfg.output_dir;
    j["cpd"] = {{"threshold", cfg.cpd.threshold},
                {"grid", cfg.cpd.grid},
                {"delta", cfg.cpd.delta},
                {"horizon", cfg.cpd.horizon},
                {"tune_mode", cfg.cpd.tune_mode},
                {"tune_streams", cfg.cpd.tune_streams},
                {"compare_slowest_base", cfg.cpd.compare_slowest_base},
                {"shadow_theory_statistic", cfg.cpd.shadow_theory_statistic}};
    j["smooth_window"] = cfg.smooth_window;
    j["record_cpd_stats"] = cfg.record_cpd_stats;
    j["save_final_snapshot"] = cfg.save_final_snapshot;
    j["offline_eval_at_end"] = cfg.offline_eval_at_end;
    j["metric_decision"] = cfg.metric_decision;
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config: unparseable JSON: ") + e.what());
    }
    try {
        RunConfig cfg = default_run_config();
        cfg.algorithm = j.at("algorithm").get<std::string>();
        cfg.lambda = j.at("lambda").get<double>();
        cfg.epsilon = j.at("epsilon").get<double>();
        cfg.schedule.kind = j.at("schedule").at("kind").get<std::string>();
        cfg.schedule.base_rate = j.at("schedule").at("base_rate").get<double>();
        const auto& rff = j.at("rff");
        cfg.rff.gamma = rff.at("gamma").get<double>();
        cfg.rff.r_min = rff.at("r_min").get<double>();
        cfg.rff.delta = rff.at("delta").get<double>();
        cfg.rff.explicit_pairs = rff.at("explicit_pairs").get<int>();
        cfg.rff.bound_constant = rff.at("bound_constant").get<double>();
        const auto& src = j.at("source");
        cfg.source.preset_name = src.at("preset").get<std::string>();
        cfg.source.csv_path = src.at("csv_path").get<std::string>();
        cfg.source.csv.feature_columns = src.at("feature_columns").get<std::vector<std::string>>();
        const std::string label = src.at("label_column").get<std::string>();
        cfg.source.csv.label_column =
            label.empty() ? std::nullopt : std::optional<std::string>(label);
        const std::string delim = src.at("delimiter").get<std::string>();
        cfg.source.csv.delimiter = delim.empty() ? ',' : delim[0];
        cfg.source.csv.outlier_value = src.at("outlier_value").get<std::string>();
        cfg.source.csv.normal_value = src.at("normal_value").get<std::string>();
        cfg.source.standardize = src.at("standardize").get<bool>();
        cfg.source.standardizer_skips_outliers = src.at("standardizer_skips_outliers").get<bool>();
        cfg.source.exclusive_standardizer = src.at("exclusive_standardizer").get<bool>();
        cfg.runs = j.at("runs").get<int>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.workers = j.at("workers").get<int>();
        cfg.output_dir = j.at("output_dir").get<std::string>();
        const auto& cpd = j.at("cpd");
        cfg.cpd.threshold = cpd.at("threshold").get<double>();
        cfg.cpd.grid = cpd.at("grid").get<std::vector<double>>();
        cfg.cpd.delta = cpd.at("delta").get<double>();
        cfg.cpd.horizon = cpd.at("horizon").get<long>();
        cfg.cpd.tune_mode = cpd.at("tune_mode").get<std::string>();
        cfg.cpd.tune_streams = cpd.at("tune_streams").get<int>();
        cfg.cpd.compare_slowest_base = cpd.at("compare_slowest_base").get<bool>();
        cfg.cpd.shadow_theory_statistic = cpd.at("shadow_theory_statistic").get<bool>();
        cfg.smooth_window = j.at("smooth_window").get<int>();
        cfg.record_cpd_stats = j.at("record_cpd_stats").get<bool>();
        cfg.save_final_snapshot = j.at("save_final_snapshot").get<bool>();
        cfg.offline_eval_at_end = j.at("offline_eval_at_end").get<bool>();
        cfg.metric_decision = j.at("metric_decision").get<std::string>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config: missing or malformed field: ") + e.what());
    }
}

RunConfig config_from_manifest(const std::string& manifest_json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(manifest_json);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest: unparseable JSON: ") + e.what());
    }
    if (!j.contains("config")) throw DataError("manifest: missing config block");
    return config_from_json(j.at("config").dump());
}

ExperimentResult run_experiment(const RunConfig& config_in) {
    RunConfig cfg = config_in;
    apply_data_preset(cfg);
    if (cfg.cpd.grid.empty()) cfg.cpd.grid = default_threshold_grid();
    validate_config(cfg);

    ExperimentResult result;
    const ResolvedSource src = resolve_source(cfg);
    result.input_dim = src.input_dim;
    result.stream_length = src.length;

    result.rff_pairs =
        cfg.rff.explicit_pairs > 0
            ? cfg.rff.explicit_pairs
            : recommended_feature_count(src.input_dim, cfg.rff.r_min, cfg.rff.delta,
                                        cfg.rff.bound_constant);

    result.cpd_threshold = cfg.cpd.threshold;
    if (cfg.algorithm == "sonarc" && cfg.cpd.threshold <= 0.0)
        result.cpd_threshold = tune_cpd_threshold(cfg, src, result.rff_pairs);

    RepContext ctx{cfg, src, result.rff_pairs, result.cpd_threshold};
    result.reps.resize(cfg.runs);

    if (cfg.workers == 1 || cfg.runs == 1) {
        for (int rep = 0; rep < cfg.runs; ++rep) result.reps[rep] = run_one_rep(ctx, rep);
    } else {
        std::atomic<int> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&]() {
            for (;;) {
                const int rep = next.fetch_add(1);
                if (rep >= cfg.runs) return;
                try {
                    result.reps[rep] = run_one_rep(ctx, rep);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        const int nthreads = std::min(cfg.workers, cfg.runs);
        pool.reserve(nthreads);
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    std::vector<MetricTrace> traces;
    traces.reserve(result.reps.size());
    for (const auto& rep : result.reps) traces.push_back(rep.trace);
    result.aggregate = aggregate(traces);

    nlohmann::ordered_json manifest;
    manifest["tool"] = "sonar-toolkit";
    manifest["version"] = kToolVersion;
    manifest["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
    manifest["resolved"] = {{"rff_pairs", result.rff_pairs},
                            {"feature_dim", 2 * result.rff_pairs},
                            {"input_dim", result.input_dim},
                            {"stream_length", result.stream_length},
                            {"cpd_threshold", result.cpd_threshold}};
    nlohmann::ordered_json reps = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < result.reps.size(); ++r) {
        const auto& rep = result.reps[r];
        nlohmann::ordered_json jr;
        jr["rep"] = r;
        jr["rep_seed"] = rep.rep_seed;
        jr["stream_seed"] = rep.stream_seed;
        jr["rff_seed"] = rep.rff_config.seed;
        jr["restarts"] = rep.restarts;
        jr["final_type1"] = rep.trace.type1.empty() || std::isnan(rep.trace.type1.back())
                                ? nlohmann::ordered_json()
                                : nlohmann::ordered_json(rep.trace.type1.back());
        jr["final_type2"] = rep.trace.type2.empty() || std::isnan(rep.trace.type2.back())
                                ? nlohmann::ordered_json()
                                : nlohmann::ordered_json(rep.trace.type2.back());
        if (rep.offline) {
            jr["offline"] = {{"type1", rep.offline->type1},
                             {"type2", rep.offline->type2},
                             {"f1", rep.offline->f1 ? nlohmann::ordered_json(*rep.offline->f1)
                                                    : nlohmann::ordered_json()}};
        }
        jr["trace_csv"] = "run_" + std::to_string(r) + ".csv";
        reps.push_back(std::move(jr));
    }
    manifest["reps"] = std::move(reps);
    result.manifest_json = manifest.dump(2);

    if (!cfg.output_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.output_dir);
        const fs::path dir(cfg.output_dir);
        {
            std::ofstream out(dir / "manifest.json");
            if (!out) throw DataError("cannot write manifest.json");
            out << result.manifest_json << "\n";
        }
        for (std::size_t r = 0; r < result.reps.size(); ++r) {
            const auto& rep = result.reps[r];
            write_trace_csv((dir / ("run_" + std::to_string(r) + ".csv")).string(), rep.trace);
            nlohmann::ordered_json sidecar;
            sidecar["rep"] = r;
            sidecar["rep_seed"] = rep.rep_seed;
            sidecar["stream_seed"] = rep.stream_seed;
            sidecar["rff_seed"] = rep.rff_config.seed;
            sidecar["smooth_window"] = cfg.smooth_window;
            sidecar["detected_changes"] = rep.restarts;
            sidecar["cpd_threshold"] = result.cpd_threshold;
            std::ofstream out(dir / ("run_" + std::to_string(r) + ".json"));
            if (!out) throw DataError("cannot write run sidecar");
            out << sidecar.dump(2) << "\n";
        }
        write_aggregate_csv((dir / "aggregate.csv").string(), result.aggregate,
                            cfg.smooth_window);
        if (cfg.save_final_snapshot && !result.reps.empty())
            save_snapshot((dir / "snapshot_0.json").string(), result.reps.front().final_state,
                          result.reps.front().rff_config);
    }
    return result;
}

} // namespace sonar
