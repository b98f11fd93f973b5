#include "etmapg/policy/checkpoint.hpp"

#include <fstream>

#include "etmapg/errors.hpp"

namespace etmapg {

void Checkpoint::add_store(const std::string& prefix, const ParamStore& store) {
  for (const auto& [name, entry] : store.entries()) parameters[prefix + name] = entry.value;
}

void Checkpoint::load_store(const std::string& prefix, ParamStore& store) const {
  for (auto& [name, entry] : store.entries()) {
    auto it = parameters.find(prefix + name);
    if (it == parameters.end()) throw ConfigError("checkpoint is missing parameter '" + prefix + name + "'");
    if (it->second.shape() != entry.value.shape()) {
      throw ConfigError("checkpoint parameter '" + prefix + name + "' has shape " + it->second.shape_string() +
                        ", model expects " + entry.value.shape_string());
    }
    entry.value = it->second;
  }
}

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : parameters) {
    params[name] = {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  return {{"metadata", metadata}, {"parameters", params}};
}

Checkpoint Checkpoint::from_json(const nlohmann::json& doc) {
  Checkpoint c;
  try {
    c.metadata = doc.at("metadata");
    for (const auto& [name, p] : doc.at("parameters").items()) {
      c.parameters.emplace(name, Tensor(p.at("shape").get<std::vector<std::size_t>>(),
                                        p.at("values").get<std::vector<double>>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

}  // namespace etmapg
