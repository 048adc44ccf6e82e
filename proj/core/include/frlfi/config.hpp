#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "frlfi/faultinj.hpp"
#include "frlfi/harness.hpp"

namespace frlfi::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses an experiment from TOML text. Unknown keys are rejected.
harness::ExperimentSpec parse_spec(std::string_view text, std::string_view source = "<string>");
harness::ExperimentSpec load_spec(const std::filesystem::path& path);

/// TOML rendering that parse_spec reads back to an equal spec.
std::string to_toml(const harness::ExperimentSpec& spec);

/// Like FaultLocation::parse, plus "AgentWeights(*)" style wildcards.
faultinj::FaultLocation parse_location(std::string_view text);
std::string location_string(const faultinj::FaultLocation& loc);

}  // namespace frlfi::config
