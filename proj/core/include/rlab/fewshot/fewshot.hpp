#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "rlab/data/dataset.hpp"
#include "rlab/numcore/rng.hpp"
#include "rlab/numcore/tensor.hpp"
#include "rlab/vit/model.hpp"

namespace rlab::fewshot {

/// One n-way k-shot task. Indices refer to the dataset; labels are
/// remapped to 0..n-1 in the order of `classes`.
struct Episode {
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::size_t q_queries = 0;
  std::vector<std::uint32_t> classes;
  std::vector<std::size_t> support;
  std::vector<int> support_labels;
  std::vector<std::size_t> query;
  std::vector<int> query_labels;
};

/// Uniform class choice, then disjoint uniform support and query images per
/// class. Throws CapacityError when the dataset is too small.
Episode sample_episode(const data::Dataset& ds, std::size_t n, std::size_t k, std::size_t q,
                       num::RngStream& rng);

/// Class means of support features: [n x dim].
num::Tensor prototypes(const num::Tensor& support_feats, std::span<const int> labels,
                       std::size_t n_way);

/// argmin_c |query - prototype_c|, ties to the lowest class.
std::vector<int> prototype_classify(const num::Tensor& support_feats,
                                    std::span<const int> support_labels,
                                    const num::Tensor& query_feats);

/// Logits -|query - prototype_c|^2 (differentiable in all inputs).
num::Tensor prototype_logits(const num::Tensor& protos, const num::Tensor& query_feats);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

enum class FinetuneRegisters { learnable, none, random };

std::string_view to_string(FinetuneRegisters r);
FinetuneRegisters parse_finetune_registers(std::string_view text);

struct FinetuneConfig {
  std::size_t steps = 50;
  double lr_registers = 1e-3;
  double lr_head = 1e-3;
  bool unfreeze_backbone = false;
  double lr_backbone = 1e-5;
  FinetuneRegisters registers = FinetuneRegisters::learnable;
  std::size_t register_count = 16;  // used when the source model has no bank
  double random_tau = 0.1;

  void validate() const;
};

struct FinetuneResult {
  double accuracy = 0.0;
  double support_accuracy = 0.0;
  double final_loss = 0.0;
  vit::ViT model;  // finetuned copy, head replaced by the n-way classifier
  reg::RegisterBank bank;
};

/// Trains a fresh register bank (per cfg.registers) and an n-way linear head
/// on the support set by full-batch cross-entropy, on a copy of `model`.
/// The head starts as the prototype classifier of the initial support
/// features: W = 2 p / dim, b = -|p|^2 / dim.
FinetuneResult finetune_episode(const vit::ViT& model, const data::Dataset& ds,
                                const Episode& episode, const FinetuneConfig& cfg,
                                num::RngStream& rng);

enum class EvalMode { plain, finetune };

std::string_view to_string(EvalMode m);
EvalMode parse_eval_mode(std::string_view text);

struct EpisodeResult {
  std::size_t index = 0;
  double accuracy = 0.0;
};

struct EvalSummary {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(episodes)
  double stddev = 0.0;
  std::vector<EpisodeResult> episodes;
};

EvalSummary summarize(std::vector<EpisodeResult> results);

/// Episode i draws from rng.derive("episode", i), so results do not depend
/// on evaluation order. Plain mode classifies final CLS features with
/// prototypes (random registers dropped, learnable ones kept).
EvalSummary evaluate(const vit::ViT& model, const data::Dataset& ds, std::size_t n,
                     std::size_t k, std::size_t q, std::size_t episodes,
                     const num::RngStream& rng, EvalMode mode,
                     const FinetuneConfig& finetune = {});

}  // namespace rlab::fewshot
