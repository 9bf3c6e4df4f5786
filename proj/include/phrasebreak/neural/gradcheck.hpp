#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "phrasebreak/error.hpp"
#include "phrasebreak/neural/tensor.hpp"

namespace phrasebreak::neural {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the gradients already stored in params against central differences
/// (f(x+h) - f(x-h)) / 2h, one coordinate at a time. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-8). `loss` must be a pure forward pass.
inline GradCheckReport finite_difference_check(const std::function<double()>& loss,
                                               const ParameterRefs<double>& params, double h = 1e-5) {
  GradCheckReport report;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double plus = loss();
      p->value[i] = saved - h;
      const double minus = loss();
      p->value[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        fail(ErrorKind::non_finite, "loss not finite while perturbing " + p->name + "[" + std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = p->name;
        report.worst_index = i;
        report.analytic_at_worst = analytic;
        report.numeric_at_worst = numeric;
      }
    }
  }
  return report;
}

}  // namespace phrasebreak::neural
