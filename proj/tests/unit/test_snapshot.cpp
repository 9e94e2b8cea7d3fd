#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "sonar/errors.hpp"
#include "sonar/snapshot.hpp"

using namespace sonar;

TEST_CASE("snapshot round-trips the learner and embedding configuration") {
    ModelState state = ModelState::zero(4, StepSchedule{ScheduleKind::AdaGrad, 0.25});
    state.w << 0.1, -0.2, 0.3, 0.05;
    state.rho = -0.125;
    state.t = 1234;
    state.schedule.grad_sq_sum = 42.5;
    const RffConfig rff{0.5, 17, 3, 987654321ULL};

    const Snapshot snap = snapshot_from_json(snapshot_to_json(state, rff));
    CHECK(snap.state.w == state.w);
    CHECK(snap.state.rho == state.rho);
    CHECK(snap.state.t == state.t);
    CHECK(snap.state.schedule.kind == ScheduleKind::AdaGrad);
    CHECK(snap.state.schedule.base_rate == state.schedule.base_rate);
    CHECK(snap.state.schedule.grad_sq_sum == state.schedule.grad_sq_sum);
    CHECK(snap.rff.gamma == rff.gamma);
    CHECK(snap.rff.num_pairs == rff.num_pairs);
    CHECK(snap.rff.seed == rff.seed);

    // The stored seed rebuilds the exact embedding.
    CHECK(sample_rff(snap.rff).omegas() == sample_rff(rff).omegas());
}

TEST_CASE("snapshot file io and malformed inputs") {
    const auto path = (std::filesystem::temp_directory_path() / "sonar_snap.json").string();
    ModelState state = ModelState::zero(2);
    save_snapshot(path, state, RffConfig{0.5, 2, 2, 1});
    const Snapshot snap = load_snapshot(path);
    CHECK(snap.state.w.size() == 2);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_snapshot(path), DataError);
    CHECK_THROWS_AS(snapshot_from_json("{not json"), DataError);
    CHECK_THROWS_AS(snapshot_from_json("{\"version\": 1}"), DataError);
    CHECK_THROWS_AS(snapshot_from_json("{\"version\": 99}"), DataError);
}
