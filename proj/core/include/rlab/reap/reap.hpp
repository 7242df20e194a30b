#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <vector>

#include "rlab/numcore/rng.hpp"
#include "rlab/numcore/tensor.hpp"
#include "rlab/vit/model.hpp"
#include "rlab/vit/tokens.hpp"

namespace rlab::reap {

struct ReapConfig {
  double anchor_ratio = 0.7;
  double drop_ratio = 0.7;
  std::size_t extra_registers = 16;

  /// Throws ConfigError for ratios outside (0, 1). An anchor ratio below 0.6
  /// is allowed and only logged.
  void validate() const;
};

/// Outcome of clustering one image's patches.
struct ReapPlan {
  std::size_t n = 0;
  std::vector<std::size_t> anchors;  // sorted ascending
  double threshold = 1.0;
  std::vector<std::uint8_t> replace_mask;  // n entries, 1 = replaced
  std::size_t replaced_count = 0;
  std::size_t target_count = 0;
  // Best similarity of each patch to any anchor (anchors: their own value).
  std::vector<double> best_similarity;

  std::vector<std::size_t> replaced_indices() const;
  std::vector<std::size_t> kept_indices() const;
};

void to_json(nlohmann::json& j, const ReapPlan& plan);

/// Per-patch channel means of one image [C x H x W]: [n x C], patches in
/// row-major grid order.
num::Tensor patch_means(const num::Tensor& image, std::size_t patch_size);

/// round(anchor_ratio n) distinct indices (at least 1, at most n - 1),
/// uniform without replacement, returned sorted.
std::vector<std::size_t> select_anchors(std::size_t n, double anchor_ratio, num::RngStream& rng);

/// x . a / (|x| |a|); 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> x, std::span<const double> a);

/// Cluster union over anchors at the largest observed anchor-patch
/// similarity that reaches round(drop_ratio n) patches, trimmed to exactly
/// that count by releasing non-anchors (lowest similarity first, then
/// lowest index). Anchors are always members.
ReapPlan build_clusters(const num::Tensor& means, std::span<const std::size_t> anchors,
                        double drop_ratio);

/// Anchors plus clusters for one image.
ReapPlan plan_image(const num::Tensor& image, std::size_t patch_size, const ReapConfig& cfg,
                    num::RngStream& rng);

/// Replaces image slot i + 1 of sequence b with tau * z wherever
/// plans[b].replace_mask[i] is set; other rows pass through untouched.
vit::TokenSequence apply_replacement(const vit::TokenSequence& seq,
                                     std::span<const ReapPlan> plans, const num::Tensor& tau,
                                     num::RngStream& rng);

/// Source-phase REAP input for a batch: CLS, image slots with clusters
/// replaced, and `extra_registers` random registers appended. Noise scales
/// come from the model's random register bank (tau_init when it has none).
/// `plans_out`, when given, receives the per-image plans.
vit::TokenSequence reap_input(const vit::ViT& model, const num::Tensor& images,
                              const ReapConfig& cfg, num::RngStream& rng,
                              std::vector<ReapPlan>* plans_out = nullptr);

enum class MaskMode { random_mask, cluster_mask };

/// Removes patches instead of replacing them: the REAP clusters
/// (cluster_mask) or the same number of uniformly chosen patches
/// (random_mask). Output sequences are CLS plus the kept image tokens.
vit::TokenSequence ablation_mask_mode(MaskMode mode, const vit::ViT& model,
                                      const num::Tensor& images, const ReapConfig& cfg,
                                      num::RngStream& rng);

}  // namespace rlab::reap
