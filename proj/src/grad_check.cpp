#include "ban/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ban/error.hpp"

namespace ban {

namespace {

double evaluate(const ScalarGraph& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.constant(p));
  const Tensor& out = tape.value(f(tape, vars));
  if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  if (!std::isfinite(out[0])) throw NumericError("grad_check: non-finite loss");
  return static_cast<double>(out[0]);
}

}  // namespace

GradCheckReport grad_check_report(const ScalarGraph& f, const std::vector<Tensor>& params, double eps) {
  if (!(eps > 0)) throw ConfigError("grad_check: eps must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var root = f(tape, vars);
    if (tape.value(root).size() != 1) throw DimensionError("grad_check: function must return a scalar");
    if (!std::isfinite(tape.value(root)[0])) throw NumericError("grad_check: non-finite loss");
    tape.backward(root);
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const Scalar orig = probe[p][i];
      probe[p][i] = orig + static_cast<Scalar>(eps);
      const double up = evaluate(f, probe);
      probe[p][i] = orig - static_cast<Scalar>(eps);
      const double down = evaluate(f, probe);
      probe[p][i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = static_cast<double>(analytic[p][i]);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (err >= report.max_rel_error) report = {err, p, i, a, numeric};
    }
  }
  return report;
}

}  // namespace ban
