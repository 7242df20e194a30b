#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rlab/numcore/tensor.hpp"

namespace rlab::num {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for one parameter group. Buffers mirror parameter sizes.
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState init(std::span<const Tensor> params, AdamHyper hyper);
};

/// One bias-corrected Adam update: p -= lr * mhat / (sqrt(vhat) + eps).
/// `grads[i]` must have params[i].size() entries.
void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state);

/// Convenience wrapper over named groups that reads each parameter's own
/// gradient slot (a missing slot counts as zero) and clears it afterwards.
class Adam {
 public:
  struct Group {
    std::vector<Tensor> params;
    AdamHyper hyper;
  };

  explicit Adam(std::vector<Group> groups);

  void step();
  void zero_grad();
  std::uint64_t steps() const { return states_.empty() ? 0 : states_.front().step; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Group> groups_;
  std::vector<AdamState> states_;
};

}  // namespace rlab::num
