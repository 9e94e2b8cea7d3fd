#include "sonar/sonarc.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "sonar/errors.hpp"

namespace sonar {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

int dyadic_scales(long horizon) {
    if (horizon < 2) return 0;
    return static_cast<int>(std::floor(std::log2(static_cast<double>(horizon))));
}

} // namespace

void CpdConfig::validate() const {
    if (horizon < 2) throw ConfigError("cpd: horizon must be >= 2");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("cpd: lambda must lie in [0,1]");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("cpd: delta must lie in (0,1)");
    if (!(threshold > 0.0)) throw ConfigError("cpd: threshold must be positive");
}

CpdEnsemble::CpdEnsemble(int dim, const CpdConfig& config) : config_(config), dim_(dim) {
    config_.validate();
    if (dim < 1) throw ConfigError("cpd: feature dimension must be >= 1");
    horizon_current_ = config_.horizon;
    rebuild(horizon_current_);
}

void CpdEnsemble::rebuild(long horizon) {
    horizon_current_ = horizon;
    main_ = ModelState::zero(dim_, StepSchedule{ScheduleKind::Theory});
    if (config_.metrics_schedule)
        metrics_main_ = ModelState::zero(dim_, *config_.metrics_schedule);
    else
        metrics_main_.reset();
    bases_.clear();
    const StepSchedule base_sched =
        config_.base_schedule ? *config_.base_schedule : StepSchedule{ScheduleKind::Theory};
    const int scales = dyadic_scales(horizon);
    for (int m = 1; m <= scales; ++m) {
        BaseLearner base;
        base.period = 1L << m;
        base.state = ModelState::zero(dim_, base_sched);
        bases_.push_back(std::move(base));
    }
    t_run_ = 0;
    last_stats_.assign(bases_.size(), kNan);
}

const ModelState& CpdEnsemble::decision_state() const {
    return metrics_main_ ? *metrics_main_ : main_;
}

const ModelState& CpdEnsemble::reference_state() const {
    if (config_.compare_slowest_base && !bases_.empty()) return bases_.back().state;
    if (metrics_main_ && !config_.shadow_theory_statistic) return *metrics_main_;
    return main_;
}

std::vector<double> CpdEnsemble::thresholds() const {
    std::vector<double> out;
    out.reserve(bases_.size());
    const double scale = std::log(static_cast<double>(std::max<long>(horizon_current_, 2))) *
                         std::log(1.0 / config_.delta);
    for (const auto& base : bases_)
        out.push_back(config_.threshold * scale / static_cast<double>(base.period));
    return out;
}

CpdStepResult CpdEnsemble::step(const FeatureVector& x) {
    if (t_global_ >= config_.horizon)
        throw InputError("cpd: stream is longer than the configured horizon");

    SonarParams params;
    params.lambda = config_.lambda;

    CpdStepResult result;
    if (metrics_main_) {
        result.flagged = sonar_step(*metrics_main_, x, params);
        sonar_step(main_, x, params);
    } else {
        result.flagged = sonar_step(main_, x, params);
    }

    for (auto& base : bases_) {
        sonar_step(base.state, x, params);
        base.in_window += 1;
        if (base.in_window == base.period) {
            // Final iterate of this window, frozen before the rate reset.
            base.snap_w = base.state.w;
            base.snap_rho = base.state.rho;
            base.has_snapshot = true;
            base.state.reset_schedule();
            base.in_window = 0;
        }
    }

    t_run_ += 1;
    t_global_ += 1;

    const ModelState& ref = reference_state();
    const std::vector<double> thr = thresholds();
    last_stats_.assign(bases_.size(), kNan);
    long trigger_scale = -1;
    for (std::size_t i = 0; i < bases_.size(); ++i) {
        const BaseLearner& base = bases_[i];
        if (!base.has_snapshot || t_run_ < base.period) continue;
        const double drho = ref.rho - base.snap_rho;
        const double stat = (ref.w - base.snap_w).squaredNorm() + drho * drho;
        last_stats_[i] = stat;
        if (trigger_scale < 0 && stat >= thr[i]) trigger_scale = static_cast<long>(i);
    }

    if (trigger_scale >= 0) {
        result.restarted = true;
        restart_log_.push_back(t_global_);
        const long remaining = horizon_current_ - t_run_;
        rebuild(std::max<long>(remaining, 0));
    }
    return result;
}

namespace {

long stream_horizon(const CpdConfig& tmpl, std::size_t stream_len) {
    return std::max<long>({tmpl.horizon, static_cast<long>(stream_len), 2L});
}

} // namespace

double max_stat_ratio(const std::vector<FeatureVector>& stream, const CpdConfig& config_template) {
    if (stream.empty()) return 0.0;
    CpdConfig cfg = config_template;
    cfg.threshold = 1e300;   // never triggers; exposes the untouched trajectory
    cfg.horizon = stream_horizon(config_template, stream.size());
    CpdEnsemble ens(static_cast<int>(stream.front().size()), cfg);
    double peak = 0.0;
    for (const auto& x : stream) {
        ens.step(x);
        const auto& stats = ens.last_stats();
        const auto thresholds = ens.thresholds();   // proportional to C = 1e300
        for (std::size_t i = 0; i < stats.size(); ++i) {
            if (std::isnan(stats[i])) continue;
            peak = std::max(peak, stats[i] / (thresholds[i] / 1e300));
        }
    }
    return peak;
}

std::vector<long> threshold_trigger_counts(
    const std::vector<std::vector<FeatureVector>>& streams,
    const CpdConfig& config_template, const std::vector<double>& grid) {
    std::vector<long> counts;
    counts.reserve(grid.size());
    for (double c : grid) {
        CpdConfig cfg = config_template;
        cfg.threshold = c;
        long triggers = 0;
        for (const auto& stream : streams) {
            if (stream.empty()) continue;
            cfg.horizon = stream_horizon(config_template, stream.size());
            CpdEnsemble ens(static_cast<int>(stream.front().size()), cfg);
            for (const auto& x : stream)
                if (ens.step(x).restarted) ++triggers;
        }
        counts.push_back(triggers);
    }
    return counts;
}

double tune_threshold(const std::vector<std::vector<FeatureVector>>& streams,
                      const CpdConfig& config_template, const std::vector<double>& grid,
                      TuneMode mode) {
    if (grid.empty()) throw TuningError("tune_threshold: empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (grid[i] <= grid[i - 1]) throw ConfigError("tune_threshold: grid must be ascending");
    if (streams.empty()) throw TuningError("tune_threshold: no streams provided");

    double peak = 0.0;
    for (const auto& stream : streams)
        peak = std::max(peak, max_stat_ratio(stream, config_template));

    if (mode == TuneMode::SmallestSafe) {
        for (double c : grid)
            if (c > peak) return c;
    } else {
        for (std::size_t i = grid.size(); i-- > 0;)
            if (grid[i] <= peak) return grid[i];
    }

    const std::vector<long> counts = threshold_trigger_counts(streams, config_template, grid);
    std::ostringstream msg;
    msg << "tune_threshold: no admissible value in grid (peak stat ratio " << peak
        << "); trigger counts:";
    for (std::size_t i = 0; i < grid.size(); ++i)
        msg << " C=" << grid[i] << "->" << counts[i];
    throw TuningError(msg.str());
}

} // namespace sonar
