#include "sonar/snapshot.hpp"

#include <fstream>

#include <json.hpp>

#include "sonar/errors.hpp"

namespace sonar {

namespace {
constexpr int kSnapshotVersion = 1;
}

std::string snapshot_to_json(const ModelState& state, const RffConfig& rff) {
    nlohmann::ordered_json j;
    j["version"] = kSnapshotVersion;
    j["w"] = std::vector<double>(state.w.data(), state.w.data() + state.w.size());
    j["rho"] = state.rho;
    j["t"] = state.t;
    j["schedule"] = {
        {"kind", to_string(state.schedule.kind)},
        {"base_rate", state.schedule.base_rate},
        {"grad_sq_sum", state.schedule.grad_sq_sum},
    };
    j["rff"] = {
        {"gamma", rff.gamma},
        {"num_pairs", rff.num_pairs},
        {"input_dim", rff.input_dim},
        {"seed", rff.seed},
    };
    return j.dump(2);
}

Snapshot snapshot_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("snapshot: unparseable JSON: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != kSnapshotVersion)
            throw DataError("snapshot: unsupported version");
        Snapshot snap;
        const auto w = j.at("w").get<std::vector<double>>();
        snap.state.w = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<long>(w.size()));
        snap.state.rho = j.at("rho").get<double>();
        snap.state.t = j.at("t").get<long>();
        const auto& sched = j.at("schedule");
        snap.state.schedule.kind = schedule_kind_from_string(sched.at("kind").get<std::string>());
        snap.state.schedule.base_rate = sched.at("base_rate").get<double>();
        snap.state.schedule.grad_sq_sum = sched.at("grad_sq_sum").get<double>();
        const auto& rff = j.at("rff");
        snap.rff.gamma = rff.at("gamma").get<double>();
        snap.rff.num_pairs = rff.at("num_pairs").get<int>();
        snap.rff.input_dim = rff.at("input_dim").get<int>();
        snap.rff.seed = rff.at("seed").get<std::uint64_t>();
        return snap;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("snapshot: missing or malformed field: ") + e.what());
    }
}

void save_snapshot(const std::string& path, const ModelState& state, const RffConfig& rff) {
    std::ofstream out(path);
    if (!out) throw DataError("snapshot: cannot write '" + path + "'");
    out << snapshot_to_json(state, rff) << "\n";
}

Snapshot load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("snapshot: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return snapshot_from_json(text);
}

} // namespace sonar
