#include "rlab/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rlab/errors.hpp"

namespace rlab::num {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check_params(const std::function<Tensor()>& loss, std::span<Tensor> params,
                                  double h) {
  if (!(h > 0.0)) throw NumericError("grad_check: step h must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    const Tensor out = loss();
    out.backward();
  }
  GradCheckResult result;
  for (auto& p : params) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double f[4];
      {
        NoGradGuard guard;
        const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
        for (int k = 0; k < 4; ++k) {
          values[i] = saved + offsets[k] * h;
          f[k] = loss().item();
        }
      }
      values[i] = saved;
      if (!std::all_of(f, f + 4, [](double v) { return std::isfinite(v); })) {
        throw NumericError("grad_check: non-finite loss while probing entry " + std::to_string(i));
      }
      // Differences first, so an input the loss ignores gives exactly 0.
      const double numeric = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * h);
      result.max_relative_error =
          std::max(result.max_relative_error, relative_error(analytic[i], numeric));
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[i] - numeric));
      ++result.entries;
    }
    p.zero_grad();
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  Tensor params[] = {x};
  return grad_check_params([&] { return f(x); }, params, h).max_relative_error;
}

}  // namespace rlab::num
