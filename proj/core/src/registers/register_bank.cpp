#include "rlab/registers/register_bank.hpp"

#include <cmath>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"

namespace rlab::reg {

RegisterBank RegisterBank::learnable(RegisterDepth depth, std::size_t count, std::size_t dim,
                                     std::size_t blocks, num::RngStream& init, double init_std) {
  RegisterBank bank;
  bank.mode_ = RegisterMode::learnable;
  bank.depth_ = depth;
  bank.count_ = count;
  bank.dim_ = dim;
  bank.blocks_ = blocks;
  const std::size_t n_banks = depth == RegisterDepth::deep ? blocks : 1;
  for (std::size_t k = 0; k < n_banks; ++k) {
    bank.banks_.emplace_back(num::Shape{count, dim}, init.normals(count * dim, init_std), true);
  }
  return bank;
}

RegisterBank RegisterBank::random(RegisterDepth depth, std::size_t count, std::size_t dim,
                                  std::size_t blocks, double tau_init, bool split_tau) {
  if (!(tau_init > 0.0)) throw ConfigError("random registers need tau_init > 0");
  RegisterBank bank;
  bank.mode_ = RegisterMode::random;
  bank.depth_ = depth;
  bank.count_ = count;
  bank.dim_ = dim;
  bank.blocks_ = blocks;
  bank.log_tau_ = num::Tensor::scalar(std::log(tau_init), true);
  if (split_tau) bank.log_tau_replace_ = num::Tensor::scalar(std::log(tau_init), true);
  return bank;
}

const num::Tensor& RegisterBank::tokens(std::size_t block) const {
  if (mode_ != RegisterMode::learnable) throw Error("RegisterBank::tokens: not a learnable bank");
  if (block >= blocks_) {
    throw IndexError("RegisterBank: block " + std::to_string(block) + " out of range [0, " +
                     std::to_string(blocks_) + ")");
  }
  return depth_ == RegisterDepth::deep ? banks_.at(block) : banks_.at(0);
}

num::Tensor RegisterBank::tau() const {
  if (mode_ != RegisterMode::random) throw Error("RegisterBank::tau: not a random bank");
  return num::exp(log_tau_);
}

num::Tensor RegisterBank::replace_tau() const {
  return split_tau() ? num::exp(log_tau_replace_) : tau();
}

double RegisterBank::tau_value() const { return std::exp(log_tau_.item()); }

std::vector<num::Tensor> RegisterBank::parameters() const {
  std::vector<num::Tensor> out;
  if (mode_ == RegisterMode::learnable) out = banks_;
  if (mode_ == RegisterMode::random) {
    out.push_back(log_tau_);
    if (split_tau()) out.push_back(log_tau_replace_);
  }
  return out;
}

std::vector<num::NamedTensor> RegisterBank::named_parameters(const std::string& prefix) const {
  std::vector<num::NamedTensor> out;
  if (mode_ == RegisterMode::learnable) {
    for (std::size_t k = 0; k < banks_.size(); ++k) {
      out.push_back({prefix + "tokens." + std::to_string(k), banks_[k]});
    }
  } else if (mode_ == RegisterMode::random) {
    out.push_back({prefix + "log_tau", log_tau_});
    if (split_tau()) out.push_back({prefix + "log_tau_replace", log_tau_replace_});
  }
  return out;
}

void RegisterBank::load(const std::vector<num::NamedTensor>& tensors, const std::string& prefix) {
  for (auto& mine : named_parameters(prefix)) {
    bool found = false;
    for (const auto& t : tensors) {
      if (t.name != mine.name) continue;
      if (t.tensor.shape() != mine.tensor.shape()) {
        throw IntegrityError("register tensor " + t.name + " has shape " +
                             num::to_string(t.tensor.shape()) + ", expected " +
                             num::to_string(mine.tensor.shape()));
      }
      auto dst = mine.tensor.mutable_data();
      std::copy(t.tensor.data().begin(), t.tensor.data().end(), dst.begin());
      found = true;
    }
    if (!found) throw IntegrityError("checkpoint lacks tensor " + mine.name);
  }
}

RegisterBank RegisterBank::clone() const {
  RegisterBank copy = *this;
  for (auto& b : copy.banks_) b = b.clone();
  if (log_tau_.defined() && log_tau_.size() == 1) copy.log_tau_ = log_tau_.clone();
  if (split_tau()) copy.log_tau_replace_ = log_tau_replace_.clone();
  return copy;
}

num::Tensor RegisterBank::block_tokens(const vit::TokenSequence& seq, std::size_t block,
                                       num::RngStream* rng) const {
  if (mode_ == RegisterMode::random) {
    if (rng == nullptr) throw Error("random registers attached without an RNG stream");
    return sample_random_registers(seq.batch * count_, dim_, tau(), *rng);
  }
  std::vector<std::size_t> index(seq.batch * count_);
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i % count_;
  return num::gather_rows(tokens(block), index);
}

vit::TokenSequence RegisterBank::attach(const vit::TokenSequence& seq, std::size_t block,
                                        num::RngStream* rng) const {
  if (!active()) return seq;
  if (block >= blocks_) {
    throw IndexError("RegisterBank::attach: block " + std::to_string(block) +
                     " out of range [0, " + std::to_string(blocks_) + ")");
  }
  if (seq.dim() != dim_) {
    throw DimensionError("RegisterBank::attach: token width " + std::to_string(seq.dim()) +
                         " vs bank width " + std::to_string(dim_));
  }
  if (block == 0) return vit::append_registers(seq, block_tokens(seq, 0, rng), count_);
  if (depth_ == RegisterDepth::shallow) return seq;
  return vit::replace_tail(seq, block_tokens(seq, block, rng), count_);
}

num::Tensor sample_random_registers(std::size_t rows, std::size_t dim, const num::Tensor& tau,
                                    num::RngStream& rng) {
  num::Tensor z({rows, dim}, rng.normals(rows * dim));
  return num::scale_by(z, tau);
}

RegisterBank registers_for_phase(Phase phase, const RegisterBank& bank, std::size_t dim,
                                 std::size_t blocks, num::RngStream* init,
                                 std::size_t fallback_count) {
  switch (phase) {
    case Phase::source:
      return bank;
    case Phase::plain_eval:
      return bank.mode() == RegisterMode::random ? RegisterBank{} : bank;
    case Phase::target: {
      if (init == nullptr) throw Error("registers_for_phase: target phase needs an init stream");
      const std::size_t count = bank.active() ? bank.count() : fallback_count;
      return RegisterBank::learnable(RegisterDepth::shallow, count, dim, blocks, *init);
    }
  }
  return bank;
}

}  // namespace rlab::reg
