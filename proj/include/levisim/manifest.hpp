#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace levisim {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string started_utc;
  std::string finished_utc;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const;
  void write(const std::string& path) const;
};

std::string utc_timestamp();

}  // namespace levisim
