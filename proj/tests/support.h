// Shared helpers for the unit tests: random tensors and an independent
// central-difference oracle for primitive ops.
#ifndef PIN_TESTS_SUPPORT_H_
#define PIN_TESTS_SUPPORT_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "pin/autodiff.h"
#include "pin/tensor.h"

namespace pin::testing {

using VarD = ad::Var<double>;
using TapeD = ad::Tape<double>;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

using OpFn = std::function<VarD(TapeD&, const std::vector<VarD>&)>;

// Worst relative error between backward() and central differences of
// L = sum(op(inputs) * probe), where probe is a fixed random weighting of the
// outputs. The denominator is floored at 1e-3 so that tiny gradients are
// judged on absolute error.
inline double op_gradient_error(const OpFn& op, std::vector<Tensor<double>> inputs,
                                std::uint64_t seed, double eps = 1e-6) {
  std::mt19937_64 rng(seed);
  Tensor<double> probe;
  auto loss_value = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
    TapeD tape;
    std::vector<VarD> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    VarD out = op(tape, vars);
    if (probe.empty()) probe = random_tensor(out.shape(), rng);
    VarD loss = ad::sum(ad::mul(out, tape.constant(probe)));
    const double v = loss.value()[0];
    if (grads != nullptr) {
      tape.backward(loss);
      for (const auto& var : vars) grads->push_back(var.grad());
    }
    return v;
  };
  std::vector<Tensor<double>> analytic;
  loss_value(inputs, &analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + eps;
      const double plus = loss_value(inputs, nullptr);
      inputs[k][i] = saved - eps;
      const double minus = loss_value(inputs, nullptr);
      inputs[k][i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace pin::testing

#endif  // PIN_TESTS_SUPPORT_H_
