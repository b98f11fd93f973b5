#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "etmapg/numerics/param_store.hpp"

namespace etmapg {

// Parameter snapshot as one JSON document:
//   {"metadata": {...}, "parameters": {"<name>": {"shape": [...], "values": [...]}}}
// Doubles are written in shortest round-trip form, so save/load is bit-exact.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> parameters;

  void add_store(const std::string& prefix, const ParamStore& store);
  // Copies every parameter of `store` from `<prefix><name>`; missing names or
  // shape mismatches are configuration errors.
  void load_store(const std::string& prefix, ParamStore& store) const;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& doc);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace etmapg
