#pragma once

#include <string>

#include "sonar/model.hpp"
#include "sonar/rff.hpp"

namespace sonar {

// Versioned learner snapshot: (w, rho, t, schedule state) plus the RFF
// configuration needed to rebuild the exact embedding for warm starts across
// process restarts.
struct Snapshot {
    ModelState state;
    RffConfig rff;
};

std::string snapshot_to_json(const ModelState& state, const RffConfig& rff);
Snapshot snapshot_from_json(const std::string& text);

void save_snapshot(const std::string& path, const ModelState& state, const RffConfig& rff);
Snapshot load_snapshot(const std::string& path);

} // namespace sonar
