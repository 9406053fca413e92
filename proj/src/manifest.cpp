#include "levisim/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace levisim {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  return {{"config_hash", config_hash}, {"seed", seed},
          {"tool_version", tool_version}, {"started_utc", started_utc},
          {"finished_utc", finished_utc}, {"outputs", outputs}};
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  out << to_json().dump(2) << "\n";
}

}  // namespace levisim
