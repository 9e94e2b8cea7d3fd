#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sonar/model.hpp"
#include "sonar/streams.hpp"

namespace sonar {

// Per-step online error accounting. Unlabeled events count toward Type I
// (the synthetic all-normal convention); labeled events route by label.
// Absent ratios and undefined margins are stored as NaN and emitted as empty
// CSV fields, never as zeros.
struct MetricTrace {
    std::vector<long> index;
    std::vector<double> type1;      // cumulative mistakes / normals seen
    std::vector<double> type2;      // cumulative misses / outliers seen
    std::vector<double> margin;
    std::vector<char> restarted;
    std::vector<std::vector<double>> cpd_stats;   // per-scale, only when recorded

    // Cumulative counters per step; the ratio columns divide these exactly.
    std::vector<long> cum_normals;
    std::vector<long> cum_mistakes;
    std::vector<long> cum_outliers;
    std::vector<long> cum_misses;

    long normals_seen = 0;
    long outliers_seen = 0;
    long type1_mistakes = 0;
    long type2_misses = 0;

    void record(const StreamEvent& event, Decision decision, std::optional<double> margin_value,
                bool restarted_now, const std::vector<double>* cpd = nullptr);
    std::size_t size() const { return index.size(); }
};

// Type I error restricted to steps [lo, hi); absent when no normals there.
std::optional<double> segment_type1(const MetricTrace& trace, std::size_t lo, std::size_t hi);
std::optional<double> segment_type2(const MetricTrace& trace, std::size_t lo, std::size_t hi);

struct AggregateTrace {
    std::vector<double> type1_mean, type1_std;
    std::vector<double> type2_mean, type2_std;
    std::vector<double> margin_mean, margin_std;
    std::vector<long> margin_count;            // runs with a defined margin per step
    std::vector<double> restart_frac;
    std::size_t size() const { return type1_mean.size(); }
};

// Pointwise mean/std (population convention). Undefined entries are excluded
// pointwise, with the surviving count reported. Lengths must match.
AggregateTrace aggregate(const std::vector<MetricTrace>& runs);

// Centered rolling mean with the window shrunk at the edges; window 1 is the
// identity.
std::vector<double> smooth(const std::vector<double>& series, int window);

struct OfflineEval {
    double type1 = 0.0;
    double type2 = 0.0;
    std::optional<double> f1;      // outlier = positive class; absent if single-class
};

OfflineEval offline_eval(const ModelState& state,
                         const std::vector<std::pair<FeatureVector, Label>>& data,
                         double epsilon = 0.0);

// One CSV per run: index,type1_cum,type2_cum,margin,restarted (+ cpd columns
// when recorded). %.17g formatting keeps repeated identical runs bit-stable.
void write_trace_csv(const std::string& path, const MetricTrace& trace);
void write_aggregate_csv(const std::string& path, const AggregateTrace& agg, int smooth_window);

} // namespace sonar
