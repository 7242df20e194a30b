#pragma once

#include <functional>
#include <span>

#include "rlab/numcore/tensor.hpp"

namespace rlab::num {

/// Relative error between an analytic and a numeric derivative:
/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// derivative is (near) zero from dominating through 0/0.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

/// Compares reverse-mode d f / d x against the five-point central difference
/// (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h, entry by entry, and
/// returns the worst relative error. Truncation is O(h^4), so strongly curved
/// losses still check at tight tolerances. `x` must be a leaf; it is restored exactly afterwards.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

/// Same check against several parameter tensors of a closed-over loss.
GradCheckResult grad_check_params(const std::function<Tensor()>& loss,
                                  std::span<Tensor> params, double h = 1e-5);

}  // namespace rlab::num
