#include "sonar/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sonar/errors.hpp"

namespace sonar {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void MetricTrace::record(const StreamEvent& event, Decision decision,
                         std::optional<double> margin_value, bool restarted_now,
                         const std::vector<double>* cpd) {
    const bool is_outlier = event.label && *event.label == Label::Outlier;
    if (is_outlier) {
        outliers_seen += 1;
        if (decision == Decision::Normal) type2_misses += 1;
    } else {
        normals_seen += 1;
        if (decision == Decision::Outlier) type1_mistakes += 1;
    }

    index.push_back(event.index);
    type1.push_back(normals_seen > 0
                        ? static_cast<double>(type1_mistakes) / static_cast<double>(normals_seen)
                        : kNan);
    type2.push_back(outliers_seen > 0
                        ? static_cast<double>(type2_misses) / static_cast<double>(outliers_seen)
                        : kNan);
    margin.push_back(margin_value ? *margin_value : kNan);
    restarted.push_back(restarted_now ? 1 : 0);
    cum_normals.push_back(normals_seen);
    cum_mistakes.push_back(type1_mistakes);
    cum_outliers.push_back(outliers_seen);
    cum_misses.push_back(type2_misses);
    if (cpd) cpd_stats.push_back(*cpd);
}

namespace {

std::optional<double> segment_ratio(const std::vector<long>& hits, const std::vector<long>& seen,
                                    std::size_t lo, std::size_t hi) {
    if (lo >= hi || hi > hits.size()) throw InputError("segment metric: bad range");
    const long hit_lo = lo > 0 ? hits[lo - 1] : 0;
    const long seen_lo = lo > 0 ? seen[lo - 1] : 0;
    const long denom = seen[hi - 1] - seen_lo;
    if (denom <= 0) return std::nullopt;
    return static_cast<double>(hits[hi - 1] - hit_lo) / static_cast<double>(denom);
}

} // namespace

std::optional<double> segment_type1(const MetricTrace& trace, std::size_t lo, std::size_t hi) {
    return segment_ratio(trace.cum_mistakes, trace.cum_normals, lo, hi);
}

std::optional<double> segment_type2(const MetricTrace& trace, std::size_t lo, std::size_t hi) {
    return segment_ratio(trace.cum_misses, trace.cum_outliers, lo, hi);
}

AggregateTrace aggregate(const std::vector<MetricTrace>& runs) {
    if (runs.empty()) throw InputError("aggregate: needs at least one run");
    const std::size_t len = runs.front().size();
    for (const auto& run : runs)
        if (run.size() != len) throw InputError("aggregate: traces have unequal lengths");

    AggregateTrace agg;
    agg.type1_mean.resize(len);
    agg.type1_std.resize(len);
    agg.type2_mean.resize(len);
    agg.type2_std.resize(len);
    agg.margin_mean.resize(len);
    agg.margin_std.resize(len);
    agg.margin_count.resize(len);
    agg.restart_frac.resize(len);

    auto mean_std = [](const std::vector<double>& vals, double& mean_out, double& std_out) {
        if (vals.empty()) {
            mean_out = kNan;
            std_out = kNan;
            return;
        }
        double sum = 0.0;
        for (double v : vals) sum += v;
        const double mean = sum / static_cast<double>(vals.size());
        double sq = 0.0;
        for (double v : vals) sq += (v - mean) * (v - mean);
        mean_out = mean;
        std_out = std::sqrt(sq / static_cast<double>(vals.size()));
    };

    std::vector<double> vals;
    vals.reserve(runs.size());
    for (std::size_t i = 0; i < len; ++i) {
        vals.clear();
        for (const auto& run : runs)
            if (!std::isnan(run.type1[i])) vals.push_back(run.type1[i]);
        mean_std(vals, agg.type1_mean[i], agg.type1_std[i]);

        vals.clear();
        for (const auto& run : runs)
            if (!std::isnan(run.type2[i])) vals.push_back(run.type2[i]);
        mean_std(vals, agg.type2_mean[i], agg.type2_std[i]);

        vals.clear();
        for (const auto& run : runs)
            if (!std::isnan(run.margin[i])) vals.push_back(run.margin[i]);
        mean_std(vals, agg.margin_mean[i], agg.margin_std[i]);
        agg.margin_count[i] = static_cast<long>(vals.size());

        long restarts = 0;
        for (const auto& run : runs) restarts += run.restarted[i] ? 1 : 0;
        agg.restart_frac[i] = static_cast<double>(restarts) / static_cast<double>(runs.size());
    }
    return agg;
}

std::vector<double> smooth(const std::vector<double>& series, int window) {
    if (window < 1) throw ConfigError("smooth: window must be >= 1");
    if (window == 1) return series;
    const long n = static_cast<long>(series.size());
    const long left = (window - 1) / 2;
    const long right = window / 2;
    std::vector<double> out(series.size());
    for (long i = 0; i < n; ++i) {
        const long lo = std::max<long>(0, i - left);
        const long hi = std::min<long>(n - 1, i + right);
        double sum = 0.0;
        long cnt = 0;
        for (long j = lo; j <= hi; ++j) {
            if (std::isnan(series[j])) continue;
            sum += series[j];
            ++cnt;
        }
        out[i] = cnt > 0 ? sum / static_cast<double>(cnt) : kNan;
    }
    return out;
}

OfflineEval offline_eval(const ModelState& state,
                         const std::vector<std::pair<FeatureVector, Label>>& data,
                         double epsilon) {
    if (data.empty()) throw InputError("offline_eval: dataset is empty");
    long normals = 0, outliers = 0, false_alarms = 0, misses = 0;
    for (const auto& [x, label] : data) {
        const Decision d = classify(state, x, epsilon);
        if (label == Label::Outlier) {
            ++outliers;
            if (d == Decision::Normal) ++misses;
        } else {
            ++normals;
            if (d == Decision::Outlier) ++false_alarms;
        }
    }
    OfflineEval eval;
    eval.type1 = normals > 0 ? static_cast<double>(false_alarms) / normals : 0.0;
    eval.type2 = outliers > 0 ? static_cast<double>(misses) / outliers : 0.0;
    if (normals > 0 && outliers > 0) {
        const double tp = static_cast<double>(outliers - misses);
        const double fp = static_cast<double>(false_alarms);
        const double fn = static_cast<double>(misses);
        const double denom = 2.0 * tp + fp + fn;
        eval.f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
    }
    return eval;
}

void write_trace_csv(const std::string& path, const MetricTrace& trace) {
    std::ofstream out(path);
    if (!out) throw DataError("metrics: cannot write '" + path + "'");
    const bool with_cpd = !trace.cpd_stats.empty();
    out << "index,type1_cum,type2_cum,margin,restarted";
    if (with_cpd) {
        const std::size_t scales = trace.cpd_stats.front().size();
        for (std::size_t m = 0; m < scales; ++m) out << ",cpd_stat_m" << (m + 1);
    }
    out << "\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        out << trace.index[i] << "," << fmt(trace.type1[i]) << "," << fmt(trace.type2[i]) << ","
            << fmt(trace.margin[i]) << "," << (trace.restarted[i] ? 1 : 0);
        if (with_cpd)
            for (double stat : trace.cpd_stats[i]) out << "," << fmt(stat);
        out << "\n";
    }
}

void write_aggregate_csv(const std::string& path, const AggregateTrace& agg, int smooth_window) {
    std::ofstream out(path);
    if (!out) throw DataError("metrics: cannot write '" + path + "'");
    const std::vector<double> margin_smooth = smooth(agg.margin_mean, smooth_window);
    out << "step,type1_mean,type1_std,type2_mean,type2_std,margin_mean,margin_std,"
           "margin_mean_smoothed,margin_count,restart_frac\n";
    for (std::size_t i = 0; i < agg.size(); ++i) {
        out << i << "," << fmt(agg.type1_mean[i]) << "," << fmt(agg.type1_std[i]) << ","
            << fmt(agg.type2_mean[i]) << "," << fmt(agg.type2_std[i]) << ","
            << fmt(agg.margin_mean[i]) << "," << fmt(agg.margin_std[i]) << ","
            << fmt(margin_smooth[i]) << "," << agg.margin_count[i] << ","
            << fmt(agg.restart_frac[i]) << "\n";
    }
}

} // namespace sonar
