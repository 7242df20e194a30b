#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rlab/numcore/rng.hpp"
#include "rlab/numcore/serialize.hpp"
#include "rlab/numcore/tensor.hpp"
#include "rlab/vit/config.hpp"
#include "rlab/vit/tokens.hpp"

namespace rlab::reg {

using vit::RegisterDepth;
using vit::RegisterMode;

enum class Phase { source, target, plain_eval };

/// Extra tokens attached to the input sequence.
///
/// Learnable banks hold trainable token tensors [count x dim]: one for a
/// shallow bank, one per block for a deep bank. Random banks hold no tokens,
/// only the noise scale tau = exp(log_tau); every attach draws fresh
/// N(0, tau^2) tokens. With `split_tau`, tokens that replace image patches
/// use a second scale exp(log_tau_replace).
class RegisterBank {
 public:
  RegisterBank() = default;

  static RegisterBank learnable(RegisterDepth depth, std::size_t count, std::size_t dim,
                                std::size_t blocks, num::RngStream& init,
                                double init_std = 0.02);
  static RegisterBank random(RegisterDepth depth, std::size_t count, std::size_t dim,
                             std::size_t blocks, double tau_init, bool split_tau = false);

  RegisterMode mode() const { return mode_; }
  RegisterDepth depth() const { return depth_; }
  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }
  std::size_t blocks() const { return blocks_; }
  bool active() const { return mode_ != RegisterMode::none && count_ > 0; }
  bool split_tau() const { return log_tau_replace_.defined() && log_tau_replace_.size() == 1; }

  /// Token bank used at `block` (the shared bank for shallow mode).
  const num::Tensor& tokens(std::size_t block) const;
  /// tau as a differentiable scalar, exp(log_tau).
  num::Tensor tau() const;
  /// Scale for replaced image slots: the split scale if present, else tau().
  num::Tensor replace_tau() const;
  double tau_value() const;

  std::vector<num::Tensor> parameters() const;
  std::vector<num::NamedTensor> named_parameters(const std::string& prefix) const;
  /// Restores values from tensors named as in named_parameters().
  void load(const std::vector<num::NamedTensor>& tensors, const std::string& prefix);
  RegisterBank clone() const;

  /// Attaches the bank at block entry `block`. Shallow banks append `count`
  /// registers to every sequence at block 0 and leave later blocks alone.
  /// Deep banks append at block 0 and overwrite the last `count` positions at
  /// every later block, discarding the previous block's register outputs.
  /// Random banks need `rng` and draw one independent set per sequence.
  /// Throws IndexError when `block` is not below blocks().
  vit::TokenSequence attach(const vit::TokenSequence& seq, std::size_t block,
                            num::RngStream* rng) const;

 private:
  num::Tensor block_tokens(const vit::TokenSequence& seq, std::size_t block,
                           num::RngStream* rng) const;

  RegisterMode mode_ = RegisterMode::none;
  RegisterDepth depth_ = RegisterDepth::shallow;
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  std::size_t blocks_ = 0;
  std::vector<num::Tensor> banks_;
  num::Tensor log_tau_;
  num::Tensor log_tau_replace_;
};

/// rows x dim matrix tau * z with z ~ N(0, 1) drawn from `rng`; gradients
/// reach tau through the product.
num::Tensor sample_random_registers(std::size_t rows, std::size_t dim, const num::Tensor& tau,
                                    num::RngStream& rng);

/// Bank in effect for a phase. Source keeps the bank as trained. Plain
/// evaluation drops random registers and keeps a learnable bank. Target
/// finetuning returns a new shallow learnable bank with the same count
/// (`fallback_count` when the source bank is empty), initialised from `init`,
/// which that phase requires.
RegisterBank registers_for_phase(Phase phase, const RegisterBank& bank, std::size_t dim,
                                 std::size_t blocks, num::RngStream* init = nullptr,
                                 std::size_t fallback_count = 16);

}  // namespace rlab::reg
