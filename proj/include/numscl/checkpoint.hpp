#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "numscl/autodiff.hpp"

namespace numscl {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "numscl-checkpoint";

inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Param& p = store[i];
    arr.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"data", p.value.values()}});
  }
  return arr;
}

/// Loads values into an already-constructed store; names and shapes must agree.
inline void params_from_json(ParamStore& store, const nlohmann::json& arr) {
  if (!arr.is_array() || arr.size() != store.size())
    throw Error("checkpoint parameter count does not match the model layout");
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    const auto& e = arr[i];
    if (e.at("name").get<std::string>() != p.name)
      throw Error("checkpoint parameter " + std::to_string(i) + " is \"" + e.at("name").get<std::string>() +
                  "\", model expects \"" + p.name + "\"");
    Tensor t(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>());
    Tensor::require_same_shape(p.value, t, p.name.c_str());
    p.value = std::move(t);
  }
}

inline nlohmann::json checkpoint_header(const std::string& kind) {
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", kind}};
}

inline void check_header(const nlohmann::json& j, const std::string& kind) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw Error("not a numscl checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  if (j.value("kind", "") != kind)
    throw Error("checkpoint kind is \"" + j.value("kind", "") + "\", expected \"" + kind + "\"");
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  os << j.dump() << '\n';
  if (!os) throw Error("write failed: " + path);
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": malformed JSON: " + e.what());
  }
}

}  // namespace numscl
