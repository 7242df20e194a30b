#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "rlab/data/dataset.hpp"
#include "rlab/numcore/adam.hpp"
#include "rlab/numcore/rng.hpp"
#include "rlab/reap/reap.hpp"
#include "rlab/vit/model.hpp"

namespace rlab::train {

enum class Method {
  baseline,
  learnable_registers,
  random_registers,
  reap,
  random_mask,
  cluster_mask,
  img_p,
  fea_p,
  weight_p,
  attn_p,
};

std::string_view to_string(Method m);
Method parse_method(std::string_view text);
const std::vector<Method>& all_methods();
bool is_perturbation(Method m);
bool uses_reap_knobs(Method m);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr_backbone = 1e-3;  // also used for register parameters
  double lr_head = 1e-3;
  double perturb_sigma = 0.05;  // img_p / fea_p / weight_p / attn_p
  reap::ReapConfig reap;

  void validate() const;
};

/// Model geometry for a method: register mode and count follow the method
/// (learnable / random registers use base.register_count, REAP uses a random
/// bank of reap.extra_registers).
vit::ViTConfig model_config_for(Method m, vit::ViTConfig base, const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;  // 0 = before the first update
  double loss = 0.0;
  double accuracy = 0.0;
  double tau = 0.0;  // random bank scale, 0 without one
};

/// Mean cross-entropy and accuracy of plain forward passes over `ds`.
EpochLog evaluate_source(const vit::ViT& model, const data::Dataset& ds,
                         std::size_t batch_size = 64);

class Trainer {
 public:
  Trainer(vit::ViT& model, Method method, const TrainConfig& cfg, std::uint64_t seed);

  /// One optimisation step on a batch; returns (loss, correct count).
  std::pair<double, std::size_t> step(const num::Tensor& images, std::span<const int> labels);
  /// A full pass over `ds` in a seeded shuffled order.
  EpochLog epoch(const data::Dataset& ds);
  std::size_t steps_taken() const { return step_; }

  /// Training-time input and forward pass for a batch, exposed for tests.
  vit::ForwardResult forward_batch(const num::Tensor& images, std::uint64_t step_index) const;

 private:
  vit::ViT& model_;
  Method method_;
  TrainConfig cfg_;
  num::RngStream root_;
  num::Adam adam_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
};

struct TrainResult {
  vit::ViT model;
  std::vector<EpochLog> log;
};

/// Builds a model for the method from `seed`, logs epoch 0, then trains for
/// cfg.epochs epochs. `on_epoch` sees every log row as it is produced.
TrainResult train_source(const data::Dataset& source, Method method, const vit::ViTConfig& base,
                         const TrainConfig& cfg, std::uint64_t seed,
                         const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace rlab::train
