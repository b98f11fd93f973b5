#pragma once

#include <map>
#include <span>
#include <string>

#include "etmapg/numerics/param_store.hpp"

namespace etmapg {

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. One instance per ParamStore; moment buffers are
// created on the first step.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(ParamStore& params);
  long steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

 private:
  struct Moments {
    Tensor first;
    Tensor second;
  };
  AdamOptions options_;
  std::map<std::string, Moments> moments_;
  long steps_ = 0;
};

// Global L2 norm over every gradient slot of the given stores.
double gradient_norm(std::span<ParamStore* const> stores);
// Rescales all gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
double clip_gradient_norm(std::span<ParamStore* const> stores, double max_norm);

}  // namespace etmapg
