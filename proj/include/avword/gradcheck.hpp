// Central-difference gradient verification.
//
// The builder must be a pure function of the leaf values it captures: it is
// re-run once per perturbed element. Ops with internal randomness must be
// seeded identically inside the builder.
#pragma once

#include <cmath>
#include <functional>

#include "avword/autodiff.hpp"

namespace avword {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // where the worst disagreement happened, for diagnostics
  std::size_t input_index = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// build() -> scalar root over the given differentiable leaves.
//
// order 2 is the plain central difference (f(x+h)-f(x-h))/2h. order 4 uses the
// five-point stencil; it tolerates a larger h, which keeps fp64 cancellation
// noise below the 1e-8 relative-error denominator floor on deep composites
// whose smallest gradients sit near that floor.
inline GradCheckResult finite_diff_check(
    const std::function<ad::VarPtr<double>()>& build,
    const std::vector<ad::VarPtr<double>>& inputs, double h = 1e-5, int order = 2) {
  AVW_CHECK(order == 2 || order == 4, "finite_diff_check: order must be 2 or 4");
  for (const auto& in : inputs) {
    AVW_CHECK(in->requires_grad, "finite_diff_check inputs must require gradients");
    in->grad = Tensor<double>();  // reset accumulators
  }
  auto root = build();
  AVW_CHECK(root->numel() == 1, "finite_diff_check needs a scalar objective");
  const double v0 = root->value[0];
  {
    auto again = build();
    AVW_CHECK(again->value[0] == v0,
              "finite_diff_check: op is not deterministic under a fixed seed");
  }
  ad::backward(root);

  GradCheckResult res;
  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    auto& in = inputs[ii];
    const bool has_grad = in->grad.numel() != 0;
    for (std::size_t i = 0; i < in->numel(); ++i) {
      const double orig = in->value[i];
      auto eval_at = [&](double v) {
        in->value[i] = v;
        return build()->value[0];
      };
      double numeric;
      if (order == 2) {
        const double fp = eval_at(orig + h);
        const double fm = eval_at(orig - h);
        numeric = (fp - fm) / (2.0 * h);
      } else {
        const double f2p = eval_at(orig + 2.0 * h);
        const double fp = eval_at(orig + h);
        const double fm = eval_at(orig - h);
        const double f2m = eval_at(orig - 2.0 * h);
        numeric = (f2m - 8.0 * fm + 8.0 * fp - f2p) / (12.0 * h);
      }
      in->value[i] = orig;
      const double analytic = has_grad ? in->grad[i] : 0.0;
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.input_index = ii;
        res.element = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace avword
