#include "levisim/json_schema.hpp"

namespace levisim {

namespace {

using nlohmann::json;

bool type_matches(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "number") return value.is_number();
  if (type == "integer") return value.is_number_integer();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

void check(const json& value, const json& schema, const std::string& path,
           std::vector<std::string>& problems) {
  if (schema.contains("oneOf")) {
    for (const auto& option : schema["oneOf"]) {
      std::vector<std::string> sub;
      check(value, option, path, sub);
      if (sub.empty()) return;
    }
    problems.push_back(path + ": matches none of the oneOf alternatives");
    return;
  }
  if (schema.contains("enum")) {
    for (const auto& allowed : schema["enum"]) {
      if (value == allowed) return;
    }
    problems.push_back(path + ": value not in enum");
    return;
  }
  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(value, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok = ok || type_matches(value, alt.get<std::string>());
    }
    if (!ok) {
      problems.push_back(path + ": wrong type");
      return;
    }
  }
  if (value.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema["required"]) {
        if (!value.contains(key.get<std::string>()))
          problems.push_back(path + ": missing required key '" + key.get<std::string>() + "'");
      }
    }
    const json props = schema.value("properties", json::object());
    const bool additional = schema.value("additionalProperties", true);
    for (const auto& [key, sub] : value.items()) {
      if (props.contains(key)) {
        check(sub, props[key], path + "/" + key, problems);
      } else if (!additional) {
        problems.push_back(path + ": unexpected key '" + key + "'");
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    std::size_t i = 0;
    for (const auto& item : value) {
      check(item, schema["items"], path + "/" + std::to_string(i++), problems);
    }
  }
}

}  // namespace

std::vector<std::string> validate_against_schema(const json& document, const json& schema) {
  std::vector<std::string> problems;
  check(document, schema, "", problems);
  return problems;
}

}  // namespace levisim
