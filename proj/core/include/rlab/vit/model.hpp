#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "rlab/numcore/rng.hpp"
#include "rlab/numcore/serialize.hpp"
#include "rlab/numcore/tensor.hpp"
#include "rlab/registers/register_bank.hpp"
#include "rlab/vit/attention.hpp"
#include "rlab/vit/config.hpp"
#include "rlab/vit/tokens.hpp"

namespace rlab::vit {

struct BlockParams {
  num::Tensor ln1_gamma, ln1_beta;
  num::Tensor w_qkv, b_qkv;  // [dim x 3 dim], [3 dim]
  num::Tensor w_out, b_out;  // [dim x dim], [dim]
  num::Tensor ln2_gamma, ln2_beta;
  num::Tensor w_fc1, b_fc1;  // [dim x hidden], [hidden]
  num::Tensor w_fc2, b_fc2;  // [hidden x dim], [dim]
};

struct ForwardOptions {
  // Registers attached at block entries; null or inactive attaches nothing.
  const reg::RegisterBank* registers = nullptr;
  num::RngStream* register_rng = nullptr;
  bool capture_attention = false;
  // Additive N(0, sigma^2) noise on post-softmax attention. Block k draws
  // from attention_rng->derive("block", k); an empty list means every block.
  double attention_sigma = 0.0;
  num::RngStream* attention_rng = nullptr;
  std::vector<std::size_t> attention_blocks;
  // Additive N(0, sigma^2) noise on every token entering block 0.
  double feature_sigma = 0.0;
  num::RngStream* feature_rng = nullptr;
};

struct ForwardResult {
  num::Tensor cls_feature;  // [batch x dim]
  num::Tensor logits;       // [batch x n_classes]
  std::vector<AttentionRecord> records;
};

/// Pre-norm Vision Transformer encoder with a linear source classifier.
///
/// Block: x += W_o MHA(LN1 x); x += MLP(LN2 x), MLP = fc2(GELU(fc1 .)).
/// The feature is the final-LN output of the CLS position.
class ViT {
 public:
  ViT() = default;
  ViT(const ViTConfig& cfg, num::RngStream& init);

  const ViTConfig& config() const { return cfg_; }

  /// Images [batch x channels x H x W] (or one [channels x H x W]) to
  /// CLS + patch tokens. Patch tokens get a positional embedding, CLS does not.
  TokenSequence patchify(const num::Tensor& images) const;

  /// One block's attention sub-layer: LN1, QKV projection, multi-head
  /// attention and output projection, without the residual.
  num::Tensor attention(std::size_t block, const TokenSequence& seq,
                        AttentionRecord* record = nullptr,
                        const AttentionNoise* noise = nullptr) const;
  TokenSequence block_forward(std::size_t block, const TokenSequence& seq,
                              AttentionRecord* record = nullptr,
                              const AttentionNoise* noise = nullptr) const;

  ForwardResult forward(const TokenSequence& seq, const ForwardOptions& options = {}) const;
  /// forward() with every block's post-softmax map replaced by A + eps.
  ForwardResult forward_perturbed_attention(const TokenSequence& seq, double sigma,
                                            num::RngStream& rng,
                                            ForwardOptions options = {}) const;
  /// Final-LN CLS features for images under the plain-evaluation register
  /// phase, computed without a graph.
  num::Tensor features(const num::Tensor& images) const;

  num::Tensor classify(const num::Tensor& cls_feature) const;

  reg::RegisterBank& registers() { return registers_; }
  const reg::RegisterBank& registers() const { return registers_; }
  /// Attaches the model's own bank unless it is inactive.
  ForwardOptions source_options(num::RngStream* register_rng) const;

  std::vector<num::NamedTensor> named_parameters() const;
  std::vector<num::Tensor> backbone_parameters() const;
  std::vector<num::Tensor> head_parameters() const;
  std::vector<num::Tensor> register_parameters() const { return registers_.parameters(); }
  std::vector<num::Tensor> parameters() const;
  void set_backbone_trainable(bool flag);

  /// Deep copy; the copy shares no storage with this model.
  ViT clone() const;
  /// Replaces the classifier with a fresh [dim x n] head.
  void reset_head(const num::Tensor& weight, const num::Tensor& bias);

  void load_parameters(const std::vector<num::NamedTensor>& tensors);

  /// Writes `path` in the tensor file format and the config as JSON beside
  /// it (same stem, ".json").
  void save(const std::filesystem::path& path) const;
  static ViT load(const std::filesystem::path& path);
  static std::filesystem::path config_path(const std::filesystem::path& checkpoint);

 private:
  ViTConfig cfg_;
  num::Tensor patch_w_, patch_b_;  // [patch_dim x dim], [dim]
  num::Tensor cls_;                // [1 x dim]
  num::Tensor pos_;                // [num_patches x dim]
  std::vector<BlockParams> blocks_;
  num::Tensor norm_gamma_, norm_beta_;
  num::Tensor head_w_, head_b_;  // [dim x n_classes], [n_classes]
  reg::RegisterBank registers_;
};

/// Pixel patches [batch * n x patch_dim]; patch p of image b is row b n + p,
/// patches in row-major grid order, each flattened channel-major.
num::Tensor extract_patches(const num::Tensor& images, const ViTConfig& cfg);

}  // namespace rlab::vit
