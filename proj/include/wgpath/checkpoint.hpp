#pragma once

// Self-describing JSON checkpoint: versioned header, architecture, base
// distribution, caller metadata, and the flat parameter vector.

#include "wgpath/flow.hpp"

#include "json.hpp"

#include <string>

namespace wgpath {

inline constexpr const char* kCheckpointFormat = "wgpath-checkpoint";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const FlowArchitecture& arch);
FlowArchitecture architecture_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BaseDistribution& base);
BaseDistribution base_from_json(const nlohmann::json& j);

struct Checkpoint {
  FlowModel model;
  nlohmann::json metadata;
};

void save_checkpoint(const std::string& path, const FlowModel& model,
                     const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace wgpath
