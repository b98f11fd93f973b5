#include "etmapg/numerics/adam.hpp"

#include <cmath>

namespace etmapg {

void Adam::step(ParamStore& params) {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& [name, entry] : params.entries()) {
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_
               .emplace(name, Moments{Tensor(entry.value.shape(), 0.0), Tensor(entry.value.shape(), 0.0)})
               .first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double g = entry.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      entry.value[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

double gradient_norm(std::span<ParamStore* const> stores) {
  double sq = 0.0;
  for (const ParamStore* s : stores) {
    for (const auto& [_, e] : s->entries()) {
      for (double g : e.grad.values()) sq += g * g;
    }
  }
  return std::sqrt(sq);
}

double clip_gradient_norm(std::span<ParamStore* const> stores, double max_norm) {
  const double norm = gradient_norm(stores);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (ParamStore* s : stores) {
      for (auto& [_, e] : s->entries()) {
        for (double& g : e.grad.values()) g *= f;
      }
    }
  }
  return norm;
}

}  // namespace etmapg
