#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ban/autograd.hpp"

namespace ban {

// Builds a scalar ([1]) loss from the parameter variables on a fresh tape.
using ScalarGraph = std::function<Var(Tape&, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

// Compares reverse-mode gradients against central differences. The error
// of one coordinate is |analytic - numeric| / max(1, |numeric|).
GradCheckReport grad_check_report(const ScalarGraph& f, const std::vector<Tensor>& params, double eps);

inline double grad_check(const ScalarGraph& f, const std::vector<Tensor>& params, double eps) {
  return grad_check_report(f, params, eps).max_rel_error;
}

}  // namespace ban
