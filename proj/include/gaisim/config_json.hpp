#pragma once

#include <string>

#include "gaisim/harness.hpp"
#include "json.hpp"

namespace gaisim {

/// Builds a run configuration from JSON. Every key is optional and falls back
/// to the built-in default; unknown keys are rejected with their full path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_file(const std::string& path);

/// The resolved configuration, round-trippable through run_config_from_json.
nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace gaisim
