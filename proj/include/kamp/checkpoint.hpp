#pragma once

// Checkpoint archives: a single binary file holding a JSON manifest (topology,
// configuration, config hash) followed by the named parameter arrays from the
// module's state, in declaration order.  Used for per-step model snapshots and
// for persisting the frozen association net next to its task spec.

#include <string>

#include <json.hpp>

#include "kamp/kanet.hpp"
#include "kamp/model.hpp"

namespace kamp {

nlohmann::json model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Stable hash of a model configuration, hex-encoded; stored in checkpoint
// manifests and used by run manifests to detect config drift.
std::string config_hash(const ModelConfig& cfg);

void save_model_checkpoint(const std::string& path, IncrementalModel& model);
IncrementalModel load_model_checkpoint(const std::string& path);

void save_kanet_checkpoint(const std::string& path, KANet& net);
KANet load_kanet_checkpoint(const std::string& path);

}  // namespace kamp
