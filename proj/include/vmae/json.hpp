#pragma once

// to_json / from_json for plain config structs. Missing keys keep the
// default-constructed value, so a config file only needs the fields it changes.

#include <nlohmann/json.hpp>

#define VMAE_JSON_FROM_OR_DEFAULT(v1) nlohmann_json_t.v1 = nlohmann_json_j.value(#v1, nlohmann_json_default_obj.v1);

#define VMAE_DEFINE_JSON(Type, ...)                                                        \
  inline void to_json(nlohmann::json& nlohmann_json_j, const Type& nlohmann_json_t) {      \
    NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(NLOHMANN_JSON_TO, __VA_ARGS__))               \
  }                                                                                        \
  inline void from_json(const nlohmann::json& nlohmann_json_j, Type& nlohmann_json_t) {    \
    const Type nlohmann_json_default_obj{};                                                \
    NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(VMAE_JSON_FROM_OR_DEFAULT, __VA_ARGS__))      \
  }
