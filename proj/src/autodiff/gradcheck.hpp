#pragma once

#include <functional>

#include "autodiff/tensor.hpp"

namespace tap::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool passed = false;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares backward() against central differences of f at x. Relative error per element is
// |a - n| / max(|a|, |n|, 1e-7). Throws if f is not deterministic.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-4, double tol = 1e-3);

}  // namespace tap::ad
