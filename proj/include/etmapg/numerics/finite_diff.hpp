#pragma once

#include <functional>

#include "etmapg/numerics/tape.hpp"

namespace etmapg {

// Builds a scalar from parameters bound on the given tape.
using ScalarProgram = std::function<Var(Tape&, ParamStore&)>;

// Compares reverse-mode gradients of `program` against central differences
// with the given step, entry by entry. Returns
//   max |analytic - numeric| / max(1, |numeric|)
// over every parameter entry. Parameter values are restored afterwards; the
// store's gradient slots hold the analytic gradient on return.
double finite_diff_check(const ScalarProgram& program, ParamStore& params, double step);

}  // namespace etmapg
