#include "pin/gradcheck.h"

#include <algorithm>
#include <cmath>

namespace pin {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(ParamStore<double>& store, const LossBuilder& loss_fn) {
  ad::Tape<double> tape;
  ad::Var<double> loss = loss_fn(tape, store);
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(ParamStore<double>& store, const LossBuilder& loss_fn, double eps,
                           const std::function<bool(const std::string&)>& filter) {
  store.zero_grad();
  {
    ad::Tape<double> tape;
    ad::Var<double> loss = loss_fn(tape, store);
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check: loss is not finite");
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto& [name, p] : store) {
    if (filter && !filter(name)) continue;
    ParamCheck check;
    check.name = name;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double plus = evaluate(store, loss_fn);
      p.value[i] = saved - eps;
      const double minus = evaluate(store, loss_fn);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = relative_error(p.grad[i], numeric);
      if (err > check.max_rel_err || i == 0) {
        check.max_rel_err = err;
        check.worst_index = i;
        check.analytic = p.grad[i];
        check.numeric = numeric;
      }
    }
    if (check.max_rel_err > report.max_rel_err || report.params.empty()) {
      report.max_rel_err = check.max_rel_err;
      report.worst_name = name;
      report.worst_index = check.worst_index;
    }
    report.params.push_back(check);
  }
  return report;
}

}  // namespace pin
