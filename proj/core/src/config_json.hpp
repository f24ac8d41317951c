#pragma once

// Internal helpers for strict config parsing: unknown keys are errors naming
// the field by dotted path. Not installed.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "casp/errors.hpp"

namespace casp::cfgjson {

inline std::string dotted(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline void check_keys(const nlohmann::json& j, const std::string& prefix,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw ConfigError("config field '" + (prefix.empty() ? std::string("<root>") : prefix) +
                      "' must be an object");
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown config field: " + dotted(prefix, item.key()));
    }
  }
}

template <typename T>
void get_if(const nlohmann::json& j, const std::string& prefix, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field " + dotted(prefix, key) + ": " + e.what());
  }
}

}  // namespace casp::cfgjson
