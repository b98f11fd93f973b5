#include "etmapg/numerics/param_store.hpp"

#include "etmapg/errors.hpp"

namespace etmapg {

void ParamStore::add(const std::string& name, Tensor init) {
  if (entries_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  Tensor grad(init.shape(), 0.0);
  entries_.emplace(name, Entry{std::move(init), std::move(grad)});
}

bool ParamStore::contains(const std::string& name) const { return entries_.contains(name); }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }
Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
Tensor& ParamStore::grad(const std::string& name) const { return entry(name).grad; }

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.fill(0.0);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

}  // namespace etmapg
