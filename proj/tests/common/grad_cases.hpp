#pragma once

// Finite-difference checks shared by the unit tests and the acceptance run.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rlab/numcore/grad_check.hpp"
#include "rlab/numcore/ops.hpp"
#include "rlab/numcore/rng.hpp"
#include "rlab/vit/attention.hpp"
#include "rlab/vit/model.hpp"

namespace gradcases {

using rlab::num::Tensor;

inline Tensor random_tensor(rlab::num::RngStream& rng, rlab::num::Shape shape, double std = 1.0) {
  const std::size_t n = rlab::num::numel(shape);
  return Tensor(std::move(shape), rng.normals(n, std), true);
}

/// Relative error of every primitive on one random draw, keyed by name.
inline std::vector<std::pair<std::string, double>> primitive_errors(int trial) {
  namespace num = rlab::num;
  num::RngStream r(100 + trial, "grad");
  const Tensor w = random_tensor(r, {4, 3});
  const Tensor other = random_tensor(r, {4, 3});
  const Tensor bias = random_tensor(r, {4});
  const Tensor g = random_tensor(r, {4}), b = random_tensor(r, {4});
  const std::vector<int> labels{0, 3, 1};
  const std::vector<std::size_t> idx{2, 0, 0, 1};
  const Tensor s = Tensor::scalar(0.7 + 0.1 * trial, true);
  const Tensor probe = random_tensor(r, {3, 4});  // weights for a scalar readout
  const Tensor gathered_probe = random_tensor(r, {4, 4});
  const Tensor lin_b = random_tensor(r, {3});
  const Tensor lin_probe = random_tensor(r, {3, 3});
  const Tensor attn_probe = random_tensor(r, {4, 4});

  auto readout = [&](const Tensor& y) { return num::sum(num::mul(y, probe)); };
  const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
      {"matmul", [&](const Tensor& x) { return num::sum(num::matmul(x, w)); }},
      {"matmul_rhs", [&](const Tensor& x) { return num::sum(num::matmul(other, x)); }},
      {"transpose", [&](const Tensor& x) { return num::sum(num::mul(num::transpose(x), w)); }},
      {"add", [&](const Tensor& x) { return readout(num::add(x, num::mul(x, x))); }},
      {"sub", [&](const Tensor& x) { return readout(num::sub(num::mul(x, x), x)); }},
      {"mul", [&](const Tensor& x) { return readout(num::mul(x, x)); }},
      {"scale", [&](const Tensor& x) { return readout(num::scale(x, -1.7)); }},
      {"scale_by", [&](const Tensor& x) { return readout(num::scale_by(x, s)); }},
      {"add_bias", [&](const Tensor& x) { return readout(num::mul(num::add_bias(x, bias), x)); }},
      {"exp", [&](const Tensor& x) { return readout(num::exp(num::scale(x, 0.5))); }},
      {"gelu", [&](const Tensor& x) { return readout(num::gelu(x)); }},
      {"sum", [&](const Tensor& x) { return num::sum(num::mul(x, x)); }},
      {"mean", [&](const Tensor& x) { return num::mean(num::mul(x, probe)); }},
      {"softmax_rows", [&](const Tensor& x) { return readout(num::softmax_rows(x)); }},
      {"cross_entropy", [&](const Tensor& x) { return num::cross_entropy(x, labels); }},
      {"layer_norm", [&](const Tensor& x) { return readout(num::layer_norm(x, g, b)); }},
      {"linear",
       [&](const Tensor& x) { return num::sum(num::mul(num::linear(x, w, lin_b), lin_probe)); }},
      {"concat_rows",
       [&](const Tensor& x) {
         const std::vector<Tensor> parts{x, num::scale(x, 2.0)};
         return num::sum(
             num::mul(num::concat_rows(parts), num::concat_rows(std::vector<Tensor>{probe, probe})));
       }},
      {"slice_rows",
       [&](const Tensor& x) {
         return num::sum(num::mul(num::slice_rows(x, 1, 3), num::slice_rows(probe, 0, 2)));
       }},
      {"gather_rows",
       [&](const Tensor& x) { return num::sum(num::mul(num::gather_rows(x, idx), gathered_probe)); }},
  };
  // The primitives are gently curved: a wide step keeps round-off on small
  // derivatives far below the tolerance, and the stencil is O(h^4).
  const double h = 1e-3;
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [name, f] : cases) {
    const Tensor x = random_tensor(r, {3, 4});
    out.emplace_back(name, num::grad_check(f, x, h));
  }
  {
    std::vector<Tensor> params{s};
    const Tensor x = random_tensor(r, {3, 4});
    out.emplace_back("scale_by.factor",
                     num::grad_check_params([&] { return readout(num::scale_by(x, s)); }, params, h)
                         .max_relative_error);
  }
  for (double sigma : {0.0, 0.3}) {
    const Tensor qkv = random_tensor(r, {2 * 2, 3 * 4});
    auto f = [&](const Tensor& x) {
      num::RngStream noise_rng(trial, "noise");
      rlab::vit::AttentionNoise noise{sigma, &noise_rng};
      return num::sum(num::mul(rlab::vit::multi_head_attention(x, 2, 2, 2, &noise), attn_probe));
    };
    out.emplace_back(sigma == 0.0 ? "attention" : "attention.noisy", num::grad_check(f, qkv, h));
  }
  return out;
}

inline rlab::vit::ViTConfig tiny_vit(rlab::vit::RegisterMode mode, rlab::vit::RegisterDepth depth) {
  rlab::vit::ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.n_classes = 3;
  c.register_mode = mode;
  c.register_depth = depth;
  c.register_count = 2;
  return c;
}

/// Full tiny-ViT cross-entropy over all parameters; the register mode and
/// depth cycle with `trial`.
inline double tiny_vit_error(int trial) {
  namespace num = rlab::num;
  namespace vit = rlab::vit;
  const vit::RegisterMode modes[] = {vit::RegisterMode::none, vit::RegisterMode::learnable,
                                     vit::RegisterMode::random};
  const auto depth = trial % 2 ? vit::RegisterDepth::deep : vit::RegisterDepth::shallow;
  num::RngStream init(50 + trial, "init");
  vit::ViT model(tiny_vit(modes[trial % 3], depth), init);
  // Three times the init scale so every path carries signal; much beyond
  // this the loss curves too sharply for finite differences at 1e-4.
  auto params = model.parameters();
  for (auto& p : params)
    for (double& v : p.mutable_data()) v *= 3.0;
  num::RngStream px(60 + trial, "img");
  std::vector<double> pixels(2 * 3 * 64);
  for (double& v : pixels) v = px.uniform();
  const Tensor img({2, 3, 8, 8}, std::move(pixels));
  const std::vector<int> labels{0, 2};
  auto loss = [&] {
    num::RngStream rr(7, "reg");
    return num::cross_entropy(model.forward(model.patchify(img), model.source_options(&rr)).logits,
                              labels);
  };
  return num::grad_check_params(loss, params).max_relative_error;
}

}  // namespace gradcases
