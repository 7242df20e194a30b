#include "rlab/vit/tokens.hpp"

#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"

namespace rlab::vit {

std::size_t TokenSequence::count(std::size_t b, TokenRole r) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < length; ++i) n += role(b, i) == r;
  return n;
}

void TokenSequence::validate() const {
  auto fail = [](const std::string& msg) { throw DimensionError("TokenSequence: " + msg); };
  if (tokens.rank() != 2 || tokens.rows() != batch * length) {
    fail("tokens " + num::to_string(tokens.shape()) + " do not hold " + std::to_string(batch) +
         " sequences of length " + std::to_string(length));
  }
  if (roles.size() != batch * length) fail("role table size mismatch");
  if (1 + image_slots > length) fail("image slots exceed sequence length");
  for (std::size_t b = 0; b < batch; ++b) {
    if (role(b, 0) != TokenRole::cls) fail("position 0 is not CLS");
    for (std::size_t i = 1; i < length; ++i) {
      const TokenRole r = role(b, i);
      if (r == TokenRole::cls) fail("second CLS token at position " + std::to_string(i));
      if (i > image_slots && r != TokenRole::reg) {
        fail("image token after register block at position " + std::to_string(i));
      }
    }
  }
}

namespace {

void require_extra(const TokenSequence& seq, const num::Tensor& extra, std::size_t per_seq,
                   const char* op) {
  if (extra.rank() != 2 || extra.rows() != seq.batch * per_seq ||
      (per_seq > 0 && extra.cols() != seq.dim())) {
    throw DimensionError(std::string(op) + ": extra rows " + num::to_string(extra.shape()) +
                         " do not match batch " + std::to_string(seq.batch) + " x " +
                         std::to_string(per_seq) + " x dim " + std::to_string(seq.dim()));
  }
}

}  // namespace

TokenSequence splice(const TokenSequence& seq, const num::Tensor& extra,
                     std::span<const std::size_t> index, std::size_t new_length,
                     std::vector<TokenRole> roles) {
  TokenSequence out;
  out.batch = seq.batch;
  out.length = new_length;
  out.image_slots = seq.image_slots;
  out.roles = std::move(roles);
  if (extra.size() == 0) {
    out.tokens = num::gather_rows(seq.tokens, index);
  } else {
    const num::Tensor parts[] = {seq.tokens, extra};
    out.tokens = num::gather_rows(num::concat_rows(parts), index);
  }
  out.validate();
  return out;
}

TokenSequence append_registers(const TokenSequence& seq, const num::Tensor& extra,
                               std::size_t per_seq) {
  if (per_seq == 0) return seq;
  require_extra(seq, extra, per_seq, "append_registers");
  const std::size_t L = seq.length + per_seq;
  const std::size_t base = seq.tokens.rows();
  std::vector<std::size_t> index(seq.batch * L);
  std::vector<TokenRole> roles(seq.batch * L);
  for (std::size_t b = 0; b < seq.batch; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      if (i < seq.length) {
        index[b * L + i] = seq.row(b, i);
        roles[b * L + i] = seq.role(b, i);
      } else {
        index[b * L + i] = base + b * per_seq + (i - seq.length);
        roles[b * L + i] = TokenRole::reg;
      }
    }
  }
  return splice(seq, extra, index, L, std::move(roles));
}

TokenSequence replace_tail(const TokenSequence& seq, const num::Tensor& extra,
                           std::size_t per_seq) {
  if (per_seq == 0) return seq;
  require_extra(seq, extra, per_seq, "replace_tail");
  if (seq.length < 1 + seq.image_slots + per_seq) {
    throw DimensionError("replace_tail: sequence of length " + std::to_string(seq.length) +
                         " has no " + std::to_string(per_seq) + " register slots");
  }
  const std::size_t L = seq.length;
  const std::size_t keep = L - per_seq;
  const std::size_t base = seq.tokens.rows();
  std::vector<std::size_t> index(seq.batch * L);
  for (std::size_t b = 0; b < seq.batch; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      index[b * L + i] = i < keep ? seq.row(b, i) : base + b * per_seq + (i - keep);
    }
  }
  return splice(seq, extra, index, L, seq.roles);
}

}  // namespace rlab::vit
