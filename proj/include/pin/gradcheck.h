#ifndef PIN_GRADCHECK_H_
#define PIN_GRADCHECK_H_

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pin/autodiff.h"
#include "pin/params.h"

namespace pin {

// Builds the loss on the given tape from the store's current values. Must be
// deterministic (no dropout, fixed sampling).
using LossBuilder = std::function<ad::Var<double>(ad::Tape<double>&, ParamStore<double>&)>;

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;  // flat row-major index of the worst element
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;  // ParamStore order
  double max_rel_err = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;

  bool passed(double tolerance) const { return max_rel_err < tolerance; }
};

// Relative error with a floor on the denominator so that near-zero gradients
// are judged on absolute error.
inline constexpr double kRelErrFloor = 1e-4;
double relative_error(double analytic, double numeric);

// Compares backward() against central differences (L(θ+eps) − L(θ−eps)) / 2eps
// for every scalar parameter. Restores all parameter values before returning.
// Only parameters whose name passes `filter` are perturbed (all when empty).
GradCheckReport grad_check(ParamStore<double>& store, const LossBuilder& loss_fn,
                           double eps = 1e-5,
                           const std::function<bool(const std::string&)>& filter = {});

}  // namespace pin

#endif  // PIN_GRADCHECK_H_
