#include "etmapg/numerics/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "etmapg/errors.hpp"

namespace etmapg {

namespace {

double evaluate(const ScalarProgram& program, ParamStore& params) {
  Tape tape(false);
  const double v = program(tape, params).item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: program evaluated to " + std::to_string(v));
  return v;
}

}  // namespace

double finite_diff_check(const ScalarProgram& program, ParamStore& params, double step) {
  if (!(step > 0.0)) throw ContractViolation("finite_diff_check: step must be positive");
  params.zero_grad();
  {
    Tape tape(true);
    Var loss = program(tape, params);
    if (!std::isfinite(loss.item())) {
      throw NumericError("finite_diff_check: program evaluated to " + std::to_string(loss.item()));
    }
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& [name, entry] : params.entries()) {
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + step;
      const double up = evaluate(program, params);
      entry.value[i] = saved - step;
      const double down = evaluate(program, params);
      entry.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(entry.grad[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace etmapg
