#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rlab/numcore/tensor.hpp"

namespace rlab::vit {

enum class TokenRole : std::uint8_t { cls, image, reg };

/// A batch of token sequences sharing one length.
///
/// `tokens` is [batch * length x dim], sequence b occupying rows
/// [b * length, (b + 1) * length). Layout per sequence: CLS at position 0,
/// then `image_slots` positions that hold image tokens (or, after REAP, the
/// random registers that replaced them), then appended registers.
struct TokenSequence {
  num::Tensor tokens;
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t image_slots = 0;
  std::vector<TokenRole> roles;  // batch * length entries

  std::size_t dim() const { return tokens.cols(); }
  TokenRole role(std::size_t b, std::size_t pos) const { return roles[b * length + pos]; }
  std::size_t count(std::size_t b, TokenRole role) const;
  std::size_t row(std::size_t b, std::size_t pos) const { return b * length + pos; }

  /// Throws DimensionError unless: one CLS at position 0; positions past the
  /// image slots are registers; tensor rows match batch * length.
  void validate() const;
};

/// Rebuilds a batch from the rows of `seq.tokens` and of `extra`.
///
/// `index` has one entry per output row: values below seq.tokens.rows() pick
/// a row of the sequence, larger values pick row (value - rows) of `extra`.
/// Gradients flow to both sources.
TokenSequence splice(const TokenSequence& seq, const num::Tensor& extra,
                     std::span<const std::size_t> index, std::size_t new_length,
                     std::vector<TokenRole> roles);

/// Appends `per_seq` rows of `extra` to every sequence (sequence b receives
/// rows [b * per_seq, (b + 1) * per_seq)), tagged as registers.
TokenSequence append_registers(const TokenSequence& seq, const num::Tensor& extra,
                               std::size_t per_seq);

/// Overwrites the last `per_seq` positions of every sequence with rows of
/// `extra`, laid out as in append_registers.
TokenSequence replace_tail(const TokenSequence& seq, const num::Tensor& extra,
                           std::size_t per_seq);

}  // namespace rlab::vit
