#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "levisim/simulate.hpp"

namespace levisim {

/// Configuration or validation failure, carrying the offending field path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything a CLI run needs: the physical system, orchestration parameters,
/// and the raw protocol section consumed by the chosen subcommand.
struct ExperimentConfig {
  SystemConfig system;
  std::uint64_t seed = 1;
  int repetitions = 0;  // 0: per-protocol default
  std::string output_dir = "out";
  nlohmann::json protocol = nlohmann::json::object();
  nlohmann::json canonical;  // defaults filled in, for hashing
};

/// Parses and validates a config file; unknown keys are rejected with their
/// path, physical invariants are enforced at load.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json(const nlohmann::json& root);

/// FNV-1a over the canonical (sorted-key) serialization; stable across field
/// reordering in the source file.
std::string config_hash(const nlohmann::json& canonical);

}  // namespace levisim
