#pragma once

#include <map>
#include <string>
#include <vector>

#include "etmapg/numerics/tensor.hpp"

namespace etmapg {

// Named trainable tensors, each paired with a same-shaped gradient slot.
// Iteration order is lexicographic by name, which keeps serialization and
// optimizer updates deterministic.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    // Scratch accumulator; writable through a const store so read-only
    // models can still be differentiated.
    mutable Tensor grad;
  };

  void add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const;

  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  Tensor& grad(const std::string& name) const;

  void zero_grad();
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::map<std::string, Entry> entries_;
};

}  // namespace etmapg
