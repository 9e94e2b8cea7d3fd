#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "sonar/errors.hpp"
#include "sonar/metrics.hpp"

using namespace sonar;

namespace {

StreamEvent event_at(long index, std::optional<Label> label = std::nullopt) {
    StreamEvent ev;
    ev.index = index;
    ev.label = label;
    return ev;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("record keeps exact cumulative ratios") {
    MetricTrace trace;
    for (int i = 0; i < 100; ++i)
        trace.record(event_at(i), i == 7 ? Decision::Outlier : Decision::Normal, 0.5, false);
    CHECK(trace.type1.back() == doctest::Approx(0.01));
    CHECK(trace.normals_seen == 100);
    CHECK(trace.type1_mistakes == 1);
    CHECK(std::isnan(trace.type2.back()));   // no outlier seen yet

    for (int i = 0; i < 10; ++i)
        trace.record(event_at(100 + i, Label::Outlier),
                     i < 4 ? Decision::Normal : Decision::Outlier, std::nullopt, false);
    CHECK(trace.type2.back() == doctest::Approx(0.4));
    CHECK(std::isnan(trace.margin.back()));   // undefined margin stays missing

    // Reconstruction from the stored counters is exact.
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (trace.cum_normals[i] > 0)
            CHECK(trace.type1[i] == static_cast<double>(trace.cum_mistakes[i]) /
                                        static_cast<double>(trace.cum_normals[i]));
    }
    CHECK(*segment_type1(trace, 0, 100) == doctest::Approx(0.01));
    CHECK(!segment_type1(trace, 100, 110).has_value());   // pure-outlier block
    CHECK(*segment_type2(trace, 100, 110) == doctest::Approx(0.4));
}

TEST_CASE("aggregate means, stds, and undefined-margin exclusion") {
    MetricTrace a, b;
    a.record(event_at(0), Decision::Normal, 0.4, false);
    b.record(event_at(0), Decision::Normal, 0.6, false);
    a.record(event_at(1), Decision::Normal, std::nullopt, false);
    b.record(event_at(1), Decision::Normal, 0.6, true);

    const AggregateTrace agg = aggregate({a, b});
    CHECK(agg.margin_mean[0] == doctest::Approx(0.5));
    CHECK(agg.margin_std[0] == doctest::Approx(0.1));   // population convention
    CHECK(agg.margin_count[0] == 2);
    CHECK(agg.margin_mean[1] == doctest::Approx(0.6));  // undefined excluded pointwise
    CHECK(agg.margin_count[1] == 1);
    CHECK(agg.restart_frac[1] == doctest::Approx(0.5));

    const AggregateTrace same = aggregate({a, a});
    CHECK(same.type1_std[0] == doctest::Approx(0.0));
    CHECK(same.margin_std[0] == doctest::Approx(0.0));

    const AggregateTrace solo = aggregate({a});
    CHECK(solo.margin_mean[0] == doctest::Approx(0.4));
    CHECK(solo.type1_mean[1] == doctest::Approx(a.type1[1]));

    MetricTrace shorter;
    shorter.record(event_at(0), Decision::Normal, 0.1, false);
    CHECK_THROWS_AS(aggregate({a, shorter}), InputError);
    CHECK_THROWS_AS(aggregate({}), InputError);
}

TEST_CASE("smooth is an edge-shrunk centered mean") {
    const std::vector<double> series{0.0, 1.0, 0.0};
    const auto out = smooth(series, 3);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(1.0 / 3.0));
    CHECK(out[2] == doctest::Approx(0.5));

    CHECK(smooth(series, 1) == series);
    const std::vector<double> constant(50, 0.7);
    for (double v : smooth(constant, 9)) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
    CHECK_THROWS_AS(smooth(series, 0), ConfigError);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> unif(-1, 1);
    std::vector<double> noisy(200);
    for (auto& v : noisy) v = unif(rng);
    const auto sm = smooth(noisy, 11);
    const double lo = *std::min_element(noisy.begin(), noisy.end());
    const double hi = *std::max_element(noisy.begin(), noisy.end());
    for (double v : sm) {
        CHECK(v >= lo);
        CHECK(v <= hi);
    }
}

TEST_CASE("offline_eval corner cases") {
    FeatureVector in(2), out_pt(2);
    in << 1, 0;
    out_pt << -1, 0;
    ModelState state = ModelState::zero(2);
    state.w = in;
    state.rho = 0.5;

    std::vector<std::pair<FeatureVector, Label>> data;
    for (int i = 0; i < 5; ++i) data.emplace_back(in, Label::Normal);
    for (int i = 0; i < 5; ++i) data.emplace_back(out_pt, Label::Outlier);

    const OfflineEval perfect = offline_eval(state, data);
    CHECK(perfect.type1 == doctest::Approx(0.0));
    CHECK(perfect.type2 == doctest::Approx(0.0));
    CHECK(*perfect.f1 == doctest::Approx(1.0));

    ModelState accept_all = ModelState::zero(2);   // w=0, rho=0: everything normal
    const OfflineEval blind = offline_eval(accept_all, data);
    CHECK(blind.type1 == doctest::Approx(0.0));
    CHECK(blind.type2 == doctest::Approx(1.0));
    CHECK(*blind.f1 == doctest::Approx(0.0));

    const std::vector<std::pair<FeatureVector, Label>> single(5, {in, Label::Normal});
    CHECK(!offline_eval(state, single).f1.has_value());
    CHECK_THROWS_AS(offline_eval(state, {}), InputError);
}

TEST_CASE("trace csv output is bit-stable") {
    MetricTrace trace;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(0, 1);
    for (int i = 0; i < 50; ++i)
        trace.record(event_at(i), unif(rng) < 0.1 ? Decision::Outlier : Decision::Normal,
                     unif(rng) < 0.2 ? std::nullopt : std::optional<double>(unif(rng)),
                     i == 20);

    const auto p1 = (std::filesystem::temp_directory_path() / "sonar_trace_a.csv").string();
    const auto p2 = (std::filesystem::temp_directory_path() / "sonar_trace_b.csv").string();
    write_trace_csv(p1, trace);
    write_trace_csv(p2, trace);
    const std::string c1 = read_file(p1);
    CHECK(!c1.empty());
    CHECK(c1 == read_file(p2));
    CHECK(c1.substr(0, 40).find("index,type1_cum,type2_cum,margin") == 0);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}
