#pragma once

#include <cstddef>

#include "rlab/numcore/rng.hpp"
#include "rlab/numcore/tensor.hpp"

namespace rlab::vit {

/// Attention maps of one block for a whole batch.
///
/// `attn` and `logits` are [batch x heads x L x L]. `attn` is the map that was
/// actually multiplied into V, so under attention noise its rows no longer
/// sum to one; `logits` are the scaled pre-softmax scores Q K^T / sqrt(d_h).
struct AttentionRecord {
  std::size_t block = 0;
  num::Tensor attn;
  num::Tensor logits;

  std::size_t batch() const { return attn.dim(0); }
  std::size_t heads() const { return attn.dim(1); }
  std::size_t length() const { return attn.dim(2); }
  double at(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
    const std::size_t L = length();
    return attn.at(((b * heads() + h) * L + i) * L + j);
  }
};

/// Additive Gaussian noise on the post-softmax map: A + sigma * z, used
/// without renormalisation. The noise is a constant of the backward pass.
struct AttentionNoise {
  double sigma = 0.0;
  num::RngStream* rng = nullptr;
};

/// Scaled dot-product attention over every head of every sequence.
///
/// `qkv` is [batch * length x 3 dim] laid out as [Q | K | V], with head h
/// using columns [h d_h, (h + 1) d_h) of each part. Returns the concatenated
/// head outputs [batch * length x dim] (before the output projection).
num::Tensor multi_head_attention(const num::Tensor& qkv, std::size_t batch, std::size_t length,
                                 std::size_t heads, const AttentionNoise* noise = nullptr,
                                 AttentionRecord* record = nullptr);

}  // namespace rlab::vit
