#include "etmapg/numerics/init.hpp"

#include <cmath>

namespace etmapg {

Tensor glorot_uniform(std::size_t in, std::size_t out, Rng& rng, double gain) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::matrix(in, out);
  for (double& v : w.values()) v = rng.uniform(-a, a);
  return w;
}

}  // namespace etmapg
