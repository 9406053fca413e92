#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace levisim {

/// Minimal JSON Schema checker covering the subset the published schemas use:
/// type, properties, required, additionalProperties, items, enum, oneOf.
/// Returns a list of "path: problem" strings; empty means valid.
std::vector<std::string> validate_against_schema(const nlohmann::json& document,
                                                 const nlohmann::json& schema);

}  // namespace levisim
