#pragma once

#include "etmapg/numerics/rng.hpp"
#include "etmapg/numerics/tensor.hpp"

namespace etmapg {

// [in x out] weights drawn uniformly from +-gain * sqrt(6 / (in + out)).
Tensor glorot_uniform(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

}  // namespace etmapg
