#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlab/data/dataset.hpp"
#include "rlab/fewshot/fewshot.hpp"
#include "rlab/numcore/rng.hpp"
#include "rlab/numcore/tensor.hpp"
#include "rlab/train/trainer.hpp"
#include "rlab/vit/model.hpp"

namespace rlab::analysis {

inline constexpr int kReportSchemaVersion = 1;

/// Images plus labels for a sharpness probe. With support == 0 the loss is
/// cross-entropy of the model's own head; otherwise the first `support`
/// images form the support set of an n_way episode, the rest are queries,
/// and the loss is cross-entropy of -squared-distance prototype logits.
struct ProbeBatch {
  num::Tensor images;  // [N x C x H x W]
  std::vector<int> labels;
  std::size_t support = 0;
  std::size_t n_way = 0;
  std::string domain;
};

ProbeBatch source_batch(const data::Dataset& ds, std::span<const std::size_t> idx,
                        std::string domain = "source");
ProbeBatch episode_batch(const data::Dataset& ds, const fewshot::Episode& episode,
                         std::string domain);

/// Loss of the probe batch under the plain-evaluation register phase, with
/// attention noise sigma drawn from `rng` when sigma != 0. No graph.
double probe_loss(const vit::ViT& model, const ProbeBatch& batch, double sigma = 0.0,
                  num::RngStream* rng = nullptr, const std::vector<std::size_t>& blocks = {});

struct SharpnessReport {
  std::string domain;
  std::vector<double> sigmas;
  std::size_t draws = 0;
  double base_loss = 0.0;
  std::vector<double> sharpness;                // per sigma: max over draws
  std::vector<std::vector<double>> increases;   // [sigma][draw]: L(A + eps) - L(A)
  std::vector<std::size_t> blocks;              // empty = all blocks

  /// Max over the first k draws only (the nested prefix).
  double sharpness_at(std::size_t sigma_index, std::size_t k) const;
};

/// Draw d is sigma * z_d with z_d from rng.derive("draw", d): the same z_d is
/// reused for every sigma, and smaller K is a prefix of larger K.
/// The maximum over draws stands in for the maximum over the noise ball.
SharpnessReport attention_sharpness(const vit::ViT& model, const ProbeBatch& batch,
                                    const std::vector<double>& sigmas, std::size_t draws,
                                    const num::RngStream& rng,
                                    const std::vector<std::size_t>& blocks = {});

/// `count` values geometric from lo to hi inclusive.
std::vector<double> geometric_grid(double lo, double hi, std::size_t count);

/// Linear-kernel HSIC with explicit centering:
/// vec(H K H) . vec(H L H) / (N - 1)^2.
double hsic(const num::Tensor& K, const num::Tensor& L);

/// Linear CKA of two representations of the same N items, clamped to [0, 1].
double cka(const num::Tensor& X, const num::Tensor& Y);

struct CkaReport {
  std::string source_batch;
  std::string target_batch;
  std::string layer = "final_cls";
  double value = 0.0;
};

/// CKA between plain-evaluation CLS features of two image batches, with the
/// feature channels as samples: cka(F_s^T, F_t^T). Batch sizes may differ.
double domain_similarity(const vit::ViT& model, const num::Tensor& source_images,
                         const num::Tensor& target_images);

/// Last-block CLS attention to image tokens, head-averaged, as a
/// [grid x grid] matrix. CLS and register columns are left out, so the
/// entries of a map do not sum to one.
num::Tensor export_attention_heatmap(const vit::ViT& model, const num::Tensor& image);

/// Row-major CSV, one grid row per line, shortest round-trip decimals.
std::string heatmap_csv(const num::Tensor& heatmap);

/// Source training with per-step Gaussian noise of the given family.
train::TrainResult perturbed_training(train::Method mode, double sigma,
                                      const data::Dataset& source, const vit::ViTConfig& base,
                                      train::TrainConfig cfg, std::uint64_t seed);

void to_json(nlohmann::json& j, const SharpnessReport& r);
void to_json(nlohmann::json& j, const CkaReport& r);

}  // namespace rlab::analysis
