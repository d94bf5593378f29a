#include "refiner/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "refiner/random.hpp"

namespace refiner {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& r : inputs) worst = std::max(worst, r.max_rel_error);
  return worst;
}

std::size_t GradCheckReport::worst_input() const {
  std::size_t idx = 0;
  for (std::size_t i = 1; i < inputs.size(); ++i)
    if (inputs[i].max_rel_error > inputs[idx].max_rel_error) idx = i;
  return idx;
}

namespace {

double contract(const Tensor<double>& out, const Tensor<double>& cotangent) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * cotangent[i];
  return acc;
}

double evaluate(const GradCheckFn& op, const std::vector<Tensor<double>>& inputs, const Tensor<double>& cotangent) {
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return contract(tape.value(op(tape, vars)), cotangent);
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& op, const std::vector<Tensor<double>>& inputs, double h,
                           std::uint64_t seed) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  const Var out = op(tape, vars);
  Rng rng(seed);
  const Tensor<double> cotangent = rng.normal_tensor<double>(tape.value(out).shape());
  tape.backward(out, cotangent);

  GradCheckReport report;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = tape.grad(vars[k]);
    InputGradReport r;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + h;
      const double up = evaluate(op, probe, cotangent);
      probe[k][i] = orig - h;
      const double down = evaluate(op, probe, cotangent);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > r.max_rel_error || i == 0) {
        r.max_rel_error = std::max(r.max_rel_error, err);
        if (err >= r.max_rel_error) {
          r.worst_index = i;
          r.analytic = analytic[i];
          r.numeric = numeric;
        }
      }
    }
    report.inputs.push_back(r);
  }
  return report;
}

}  // namespace refiner
