#pragma once

// nlohmann/json bindings for the configuration structs; private to the
// library so the public headers stay free of the JSON dependency.

#include <json.hpp>
#include <set>
#include <string>

#include "semaforge/config.hpp"
#include "semaforge/errors.hpp"

namespace semaforge::detail {

nlohmann::json model_config_json(const ModelConfig& c);
nlohmann::json train_config_json(const TrainConfig& c);
// Overrides fields of `c` from `j`; throws ParseError on unknown keys or
// type mismatches, naming `where`.
void apply_model_config(const nlohmann::json& j, ModelConfig& c, const std::string& where);
void apply_train_config(const nlohmann::json& j, TrainConfig& c, const std::string& where);

nlohmann::json parse_json(const std::string& text, const std::string& origin);

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ParseError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + "." + key + ": " + e.what());
  }
}

}  // namespace semaforge::detail
