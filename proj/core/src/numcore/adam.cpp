#include "rlab/numcore/adam.hpp"

#include <cmath>

#include "rlab/errors.hpp"

namespace rlab::num {

AdamState AdamState::init(std::span<const Tensor> params, AdamHyper hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " +
                         std::to_string(state.m.size()) + " moment buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has shape " +
                           to_string(params[i].shape()) + " but gradient has " +
                           std::to_string(grads[i].size()) + " entries");
    }
  }
  ++state.step;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
    check_finite("adam_step", p);
  }
}

Adam::Adam(std::vector<Group> groups) : groups_(std::move(groups)) {
  for (const auto& g : groups_) states_.push_back(AdamState::init(g.params, g.hyper));
}

void Adam::step() {
  for (std::size_t k = 0; k < groups_.size(); ++k) {
    auto& params = groups_[k].params;
    std::vector<std::vector<double>> zeros;
    std::vector<std::span<const double>> grads;
    zeros.reserve(params.size());
    for (auto& p : params) {
      if (p.has_grad()) {
        grads.emplace_back(p.grad());
      } else {
        zeros.emplace_back(p.size(), 0.0);
        grads.emplace_back(zeros.back());
      }
    }
    adam_step(params, grads, states_[k]);
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) p.zero_grad();
  }
}

}  // namespace rlab::num
