#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sonar/errors.hpp"
#include "sonar/metrics.hpp"
#include "sonar/rng.hpp"
#include "sonar/runner.hpp"
#include "sonar/snapshot.hpp"
#include "sonar/sonarc.hpp"
#include "sonar/streams.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitAssert = 3;

struct RunAssertions {
    double tail_type1_max = -1.0;       // second-half online Type I bound
    long restarts_max = -1;
    long restarts_min = -1;
};

void add_run_options(CLI::App* cmd, sonar::RunConfig& cfg, bool& no_standardize,
                     std::string& label_column) {
    cmd->add_option("--algorithm", cfg.algorithm, "sonar|sgd_ocsvm|sonarc|oracle_restart")
        ->capture_default_str();
    cmd->add_option("--lambda", cfg.lambda, "anticipated outlier proportion")
        ->capture_default_str();
    cmd->add_option("--epsilon", cfg.epsilon, "classification threshold shrink")
        ->capture_default_str();
    cmd->add_option("--schedule", cfg.schedule.kind, "theory|adagrad|bottou")
        ->capture_default_str();
    cmd->add_option("--base-rate", cfg.schedule.base_rate, "eta0 for adagrad/bottou")
        ->capture_default_str();
    cmd->add_option("--gamma", cfg.rff.gamma, "RBF bandwidth")->capture_default_str();
    cmd->add_option("--r-min", cfg.rff.r_min, "margin lower bound for the feature count")
        ->capture_default_str();
    cmd->add_option("--rff-delta", cfg.rff.delta, "failure probability in the feature count")
        ->capture_default_str();
    cmd->add_option("--pairs", cfg.rff.explicit_pairs,
                    "explicit sin/cos pair count (0 = derive)")
        ->capture_default_str();
    cmd->add_option("--rff-constant", cfg.rff.bound_constant,
                    "constant c in the feature-count bound")
        ->capture_default_str();
    cmd->add_option("--preset", cfg.source.preset_name,
                    "synthetic preset (stationary2|mild4|transfer2|adversarial10|hemisphere2) "
                    "or data preset (skab|iot23)")
        ->capture_default_str();
    cmd->add_option("--csv", cfg.source.csv_path, "CSV source (header row required)");
    cmd->add_option("--features", cfg.source.csv.feature_columns,
                    "feature columns by name or index");
    cmd->add_option("--label-column", label_column, "label column name or index");
    cmd->add_option("--outlier-value", cfg.source.csv.outlier_value, "label value for outliers")
        ->capture_default_str();
    cmd->add_option("--normal-value", cfg.source.csv.normal_value, "label value for normals")
        ->capture_default_str();
    cmd->add_flag("--standardize", cfg.source.standardize, "running standardization");
    cmd->add_flag("--no-standardize", no_standardize, "disable standardization for CSV");
    cmd->add_flag("--skip-outliers-in-standardizer", cfg.source.standardizer_skips_outliers,
                  "exclude labeled outliers from the running statistics");
    cmd->add_flag("--exclusive-standardizer", cfg.source.exclusive_standardizer,
                  "standardize with prefix statistics only");
    cmd->add_option("--runs", cfg.runs, "seeded repetitions")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
    cmd->add_option("--workers", cfg.workers, "parallel repetitions")->capture_default_str();
    cmd->add_option("--out-dir", cfg.output_dir, "output directory for metric files");
    cmd->add_option("--cpd-threshold", cfg.cpd.threshold, "C (<= 0: tune first)")
        ->capture_default_str();
    cmd->add_option("--cpd-grid", cfg.cpd.grid, "ascending tuning grid for C");
    cmd->add_option("--cpd-delta", cfg.cpd.delta, "delta in the detection threshold")
        ->capture_default_str();
    cmd->add_option("--cpd-horizon", cfg.cpd.horizon, "horizon T (0 = stream length)")
        ->capture_default_str();
    cmd->add_option("--tune-mode", cfg.cpd.tune_mode, "smallest-safe|largest-detecting")
        ->capture_default_str();
    cmd->add_option("--tune-streams", cfg.cpd.tune_streams, "stationary tuning streams")
        ->capture_default_str();
    cmd->add_flag("--compare-slowest-base", cfg.cpd.compare_slowest_base,
                  "test statistic against the slowest base instead of the main learner");
    cmd->add_flag("--cpd-shadow-theory-main", cfg.cpd.shadow_theory_statistic,
                  "keep a shadow 1/t main and 1/t bases on the test statistic under a "
                  "heuristic run schedule");
    cmd->add_option("--smooth-window", cfg.smooth_window, "margin smoothing window")
        ->capture_default_str();
    cmd->add_flag("--record-cpd-stats", cfg.record_cpd_stats,
                  "emit per-scale detection statistics into the trace");
    cmd->add_flag("--save-snapshot", cfg.save_final_snapshot,
                  "write snapshot_0.json (first repetition's final state)");
    cmd->add_flag("--offline-eval", cfg.offline_eval_at_end,
                  "final-iterate offline error on the labeled stream");
    cmd->add_option("--metric-decision", cfg.metric_decision,
                    "pre|post: evaluate each point against the iterate before or after "
                    "its own update")
        ->capture_default_str();
}

int report_and_exit_code(const sonar::ExperimentResult& result, const sonar::RunConfig& cfg,
                         const RunAssertions& asserts) {
    const auto& agg = result.aggregate;
    std::cout << "runs: " << result.reps.size() << ", stream length: " << result.stream_length
              << ", rff pairs: " << result.rff_pairs << "\n";
    if (cfg.algorithm == "sonarc")
        std::cout << "cpd threshold: " << result.cpd_threshold << "\n";

    double mean_restarts = 0.0;
    for (const auto& rep : result.reps) mean_restarts += static_cast<double>(rep.restarts.size());
    mean_restarts /= static_cast<double>(result.reps.size());

    double tail_sum = 0.0;
    long tail_n = 0;
    for (const auto& rep : result.reps) {
        const auto tail =
            sonar::segment_type1(rep.trace, rep.trace.size() / 2, rep.trace.size());
        if (tail) {
            tail_sum += *tail;
            ++tail_n;
        }
    }
    const double tail_type1 = tail_n > 0 ? tail_sum / tail_n : std::nan("");

    if (!agg.type1_mean.empty() && !std::isnan(agg.type1_mean.back()))
        std::cout << "final online type1 (mean): " << agg.type1_mean.back() << "\n";
    if (!agg.type2_mean.empty() && !std::isnan(agg.type2_mean.back()))
        std::cout << "final online type2 (mean): " << agg.type2_mean.back() << "\n";
    if (!std::isnan(tail_type1))
        std::cout << "second-half online type1 (mean): " << tail_type1 << "\n";
    if (cfg.algorithm == "sonarc") std::cout << "mean restarts: " << mean_restarts << "\n";
    for (const auto& rep : result.reps) {
        if (rep.offline) {
            std::cout << "offline (rep0): type1 " << rep.offline->type1 << ", type2 "
                      << rep.offline->type2;
            if (rep.offline->f1) std::cout << ", f1 " << *rep.offline->f1;
            std::cout << "\n";
            break;
        }
    }
    if (!cfg.output_dir.empty()) std::cout << "wrote " << cfg.output_dir << "/manifest.json\n";

    bool failed = false;
    if (asserts.tail_type1_max >= 0.0 && !(tail_type1 <= asserts.tail_type1_max)) {
        std::cerr << "assert failed: second-half type1 " << tail_type1 << " > "
                  << asserts.tail_type1_max << "\n";
        failed = true;
    }
    if (asserts.restarts_max >= 0 && mean_restarts > static_cast<double>(asserts.restarts_max)) {
        std::cerr << "assert failed: mean restarts " << mean_restarts << " > "
                  << asserts.restarts_max << "\n";
        failed = true;
    }
    if (asserts.restarts_min >= 0 && mean_restarts < static_cast<double>(asserts.restarts_min)) {
        std::cerr << "assert failed: mean restarts " << mean_restarts << " < "
                  << asserts.restarts_min << "\n";
        failed = true;
    }
    return failed ? kExitAssert : kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming one-class anomaly detection toolkit"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "emit a synthetic preset stream as CSV");
    std::string gen_preset = "stationary2";
    std::uint64_t gen_seed = 1;
    std::string gen_out = "stream.csv";
    gen->add_option("--preset", gen_preset, "preset name")->capture_default_str();
    gen->add_option("--seed", gen_seed, "stream seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output CSV path")->capture_default_str();

    // run
    auto* run = app.add_subcommand("run", "run seeded repetitions and emit metric files");
    run->set_config("--config", "", "key-value config file; flags override it");
    sonar::RunConfig cfg = sonar::default_run_config();
    bool no_standardize = false;
    std::string label_column;
    std::string manifest_in;
    std::string export_grid_path;
    sonar::GridSpec grid_spec;
    RunAssertions asserts;
    add_run_options(run, cfg, no_standardize, label_column);
    run->add_option("--manifest-in", manifest_in,
                    "reproduce a previous run from its manifest (other flags ignored)");
    run->add_option("--export-grid", export_grid_path,
                    "write the first repetition's acceptance region over a 2-D grid");
    run->add_option("--grid-min", grid_spec.x_min, "grid lower bound (both axes)")
        ->capture_default_str();
    run->add_option("--grid-max", grid_spec.x_max, "grid upper bound (both axes)")
        ->capture_default_str();
    run->add_option("--grid-resolution", grid_spec.resolution, "grid points per axis")
        ->capture_default_str();
    run->add_option("--assert-tail-type1", asserts.tail_type1_max,
                    "exit 3 unless mean second-half type1 is at most this");
    run->add_option("--assert-max-restarts", asserts.restarts_max,
                    "exit 3 if mean restarts exceed this");
    run->add_option("--assert-min-restarts", asserts.restarts_min,
                    "exit 3 if mean restarts fall below this");

    // tune-cpd
    auto* tune = app.add_subcommand("tune-cpd", "select the detection threshold C");
    sonar::RunConfig tune_cfg = sonar::default_run_config();
    bool tune_no_std = false;
    std::string tune_label;
    add_run_options(tune, tune_cfg, tune_no_std, tune_label);

    // eval-offline
    auto* eval = app.add_subcommand("eval-offline", "final-iterate offline error from a snapshot");
    std::string eval_snapshot, eval_csv, eval_label = "anomaly";
    bool eval_no_standardize = false;
    double eval_epsilon = 0.0;
    sonar::CsvOptions eval_csv_opts;
    eval->add_option("--snapshot", eval_snapshot, "snapshot JSON")->required();
    eval->add_option("--csv", eval_csv, "labeled CSV dataset")->required();
    eval->add_option("--label-column", eval_label, "label column")->capture_default_str();
    eval->add_option("--features", eval_csv_opts.feature_columns, "feature columns");
    eval->add_option("--outlier-value", eval_csv_opts.outlier_value)->capture_default_str();
    eval->add_option("--normal-value", eval_csv_opts.normal_value)->capture_default_str();
    eval->add_flag("--no-standardize", eval_no_standardize, "skip running standardization");
    eval->add_option("--epsilon", eval_epsilon, "threshold shrink")->capture_default_str();

    // grid-export
    auto* grid = app.add_subcommand("grid-export", "acceptance region of a snapshot on a grid");
    std::string grid_snapshot, grid_out = "grid.csv";
    sonar::GridSpec grid_only_spec;
    double grid_epsilon = 0.0;
    grid->add_option("--snapshot", grid_snapshot, "snapshot JSON")->required();
    grid->add_option("--out", grid_out, "output CSV")->capture_default_str();
    grid->add_option("--grid-min", grid_only_spec.x_min)->capture_default_str();
    grid->add_option("--grid-max", grid_only_spec.x_max)->capture_default_str();
    grid->add_option("--grid-resolution", grid_only_spec.resolution)->capture_default_str();
    grid->add_option("--epsilon", grid_epsilon)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) {
            const auto events = sonar::generate(sonar::preset(gen_preset, gen_seed));
            sonar::write_stream_csv(gen_out, events);
            std::cout << "wrote " << events.size() << " events to " << gen_out << "\n";
            return kExitOk;
        }

        if (run->parsed()) {
            if (!manifest_in.empty()) {
                std::ifstream in(manifest_in);
                if (!in) throw sonar::DataError("cannot open manifest '" + manifest_in + "'");
                std::string text((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
                const std::string out_dir = cfg.output_dir;
                cfg = sonar::config_from_manifest(text);
                if (run->count("--out-dir")) cfg.output_dir = out_dir;
            } else {
                if (!label_column.empty()) cfg.source.csv.label_column = label_column;
                if (!cfg.source.csv_path.empty() && !run->count("--standardize") &&
                    !no_standardize)
                    cfg.source.standardize = true;
                if (no_standardize) cfg.source.standardize = false;
                if (!cfg.source.csv_path.empty() &&
                    cfg.source.preset_name == sonar::default_run_config().source.preset_name &&
                    !run->count("--preset"))
                    cfg.source.preset_name.clear();
            }
            const sonar::ExperimentResult result = sonar::run_experiment(cfg);
            if (!export_grid_path.empty()) {
                grid_spec.y_min = grid_spec.x_min;
                grid_spec.y_max = grid_spec.x_max;
                const auto& rep = result.reps.front();
                const sonar::RffMap map = sonar::sample_rff(rep.rff_config);
                sonar::write_grid_csv(export_grid_path, rep.final_state, map, grid_spec,
                                      cfg.epsilon);
                std::cout << "wrote " << export_grid_path << "\n";
            }
            return report_and_exit_code(result, cfg, asserts);
        }

        if (tune->parsed()) {
            if (!tune_label.empty()) tune_cfg.source.csv.label_column = tune_label;
            tune_cfg.algorithm = "sonarc";
            tune_cfg.cpd.threshold = 0.0;
            tune_cfg.runs = 1;
            sonar::RunConfig probe = tune_cfg;
            probe.output_dir.clear();
            // Resolve the threshold without running the experiment proper.
            probe.cpd.horizon = tune_cfg.cpd.horizon;
            const sonar::ExperimentResult result = [&] {
                sonar::RunConfig one = probe;
                one.runs = 1;
                return sonar::run_experiment(one);
            }();
            std::cout << "tuned cpd threshold: " << result.cpd_threshold << "\n";
            return kExitOk;
        }

        if (eval->parsed()) {
            const sonar::Snapshot snap = sonar::load_snapshot(eval_snapshot);
            const sonar::RffMap map = sonar::sample_rff(snap.rff);
            eval_csv_opts.label_column = eval_label;
            const auto events = sonar::ingest_csv(eval_csv, eval_csv_opts);
            std::optional<sonar::RunningStandardizer> stdz;
            if (!eval_no_standardize) stdz.emplace();
            std::vector<std::pair<sonar::FeatureVector, sonar::Label>> data;
            for (const auto& ev : events) {
                if (!ev.label) continue;
                const Eigen::VectorXd x = stdz ? stdz->push(ev.x_raw) : ev.x_raw;
                data.emplace_back(map.embed(x), *ev.label);
            }
            const sonar::OfflineEval res = sonar::offline_eval(snap.state, data, eval_epsilon);
            nlohmann::ordered_json j;
            j["type1"] = res.type1;
            j["type2"] = res.type2;
            j["f1"] = res.f1 ? nlohmann::ordered_json(*res.f1) : nlohmann::ordered_json();
            std::cout << j.dump(2) << "\n";
            return kExitOk;
        }

        if (grid->parsed()) {
            const sonar::Snapshot snap = sonar::load_snapshot(grid_snapshot);
            const sonar::RffMap map = sonar::sample_rff(snap.rff);
            grid_only_spec.y_min = grid_only_spec.x_min;
            grid_only_spec.y_max = grid_only_spec.x_max;
            sonar::write_grid_csv(grid_out, snap.state, map, grid_only_spec, grid_epsilon);
            std::cout << "wrote " << grid_out << "\n";
            return kExitOk;
        }
    } catch (const sonar::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const sonar::TuningError& e) {
        std::cerr << "tuning error: " << e.what() << "\n";
        return kExitData;
    } catch (const sonar::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const sonar::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitData;
    } catch (const sonar::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
