#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "refiner/random.hpp"
#include "refiner/tape.hpp"
#include "refiner/tensor.hpp"

namespace refiner {

struct InputGradReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<InputGradReport> inputs;

  double max_rel_error() const;
  /// Input position holding the largest error.
  std::size_t worst_input() const;
  bool passed(double tol) const { return max_rel_error() <= tol; }
};

/// Builds the op under test on a fresh tape from leaf variables.
using GradCheckFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Central-difference check of an op's vector-Jacobian product. The output is
/// contracted with a fixed random cotangent so every output entry contributes.
/// Error per entry: |g_analytic - g_fd| / max(1, |g_fd|).
GradCheckReport grad_check(const GradCheckFn& op, const std::vector<Tensor<double>>& inputs, double h = 1e-5,
                           std::uint64_t seed = 0x5eed);

/// One primitive op with a generator of random inputs; each call to make()
/// draws a new shape.
struct GradCheckCase {
  std::string op;  // name the op records on the tape
  GradCheckFn fn;
  std::function<std::vector<Tensor<double>>(Rng&)> make;
};

/// A case for every primitive op in the library.
const std::vector<GradCheckCase>& primitive_grad_cases();
/// Every primitive op name the library records.
const std::vector<std::string>& primitive_op_names();

}  // namespace refiner
