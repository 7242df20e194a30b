#include "rlab/vit/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"
#include "rlab/vit/config_json.hpp"

namespace rlab::vit {

namespace {

constexpr double kInitStd = 0.02;

num::Tensor normal_param(num::RngStream& init, const std::string& name, num::Shape shape) {
  auto stream = init.derive(name);
  const std::size_t n = num::numel(shape);
  return num::Tensor(std::move(shape), stream.normals(n, kInitStd), true);
}

// Xavier-normal for [in x out] weights.
num::Tensor weight_param(num::RngStream& init, const std::string& name, num::Shape shape) {
  auto stream = init.derive(name);
  const std::size_t n = num::numel(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
  return num::Tensor(std::move(shape), stream.normals(n, std), true);
}

num::Tensor constant_param(num::Shape shape, double value) {
  const std::size_t n = num::numel(shape);
  return num::Tensor(std::move(shape), std::vector<double>(n, value), true);
}

void check_images(const num::Tensor& images, const ViTConfig& cfg, std::size_t& batch) {
  const auto& s = images.shape();
  const bool single = s.size() == 3;
  if (!(single || s.size() == 4)) {
    throw DimensionError("images must be [C x H x W] or [B x C x H x W], got " +
                         num::to_string(s));
  }
  const std::size_t off = single ? 0 : 1;
  if (s[off] != cfg.channels || s[off + 1] != cfg.image_size || s[off + 2] != cfg.image_size) {
    throw DimensionError("image shape " + num::to_string(s) + " does not match " +
                         std::to_string(cfg.channels) + " x " + std::to_string(cfg.image_size) +
                         " x " + std::to_string(cfg.image_size));
  }
  batch = single ? 1 : s[0];
}

}  // namespace

num::Tensor extract_patches(const num::Tensor& images, const ViTConfig& cfg) {
  std::size_t batch = 0;
  check_images(images, cfg, batch);
  const std::size_t C = cfg.channels, S = cfg.image_size, P = cfg.patch_size, G = cfg.grid();
  const std::size_t n = cfg.num_patches(), pd = cfg.patch_dim();
  const double* px = images.data().data();
  std::vector<double> out(batch * n * pd);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < G; ++gy) {
      for (std::size_t gx = 0; gx < G; ++gx) {
        double* row = out.data() + (b * n + gy * G + gx) * pd;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t dy = 0; dy < P; ++dy) {
            const double* src = px + ((b * C + c) * S + gy * P + dy) * S + gx * P;
            std::copy(src, src + P, row + (c * P + dy) * P);
          }
        }
      }
    }
  }
  return num::Tensor({batch * n, pd}, std::move(out));
}

ViT::ViT(const ViTConfig& cfg, num::RngStream& init) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t D = cfg_.dim, H = cfg_.mlp_hidden();
  patch_w_ = weight_param(init, "patch_embed.weight", {cfg_.patch_dim(), D});
  patch_b_ = constant_param({D}, 0.0);
  cls_ = normal_param(init, "cls", {1, D});
  pos_ = normal_param(init, "pos", {cfg_.num_patches(), D});
  for (std::size_t k = 0; k < cfg_.depth; ++k) {
    const std::string p = "blocks." + std::to_string(k) + ".";
    BlockParams blk;
    blk.ln1_gamma = constant_param({D}, 1.0);
    blk.ln1_beta = constant_param({D}, 0.0);
    blk.w_qkv = weight_param(init, p + "w_qkv", {D, 3 * D});
    blk.b_qkv = constant_param({3 * D}, 0.0);
    blk.w_out = weight_param(init, p + "w_out", {D, D});
    blk.b_out = constant_param({D}, 0.0);
    blk.ln2_gamma = constant_param({D}, 1.0);
    blk.ln2_beta = constant_param({D}, 0.0);
    blk.w_fc1 = weight_param(init, p + "w_fc1", {D, H});
    blk.b_fc1 = constant_param({H}, 0.0);
    blk.w_fc2 = weight_param(init, p + "w_fc2", {H, D});
    blk.b_fc2 = constant_param({D}, 0.0);
    blocks_.push_back(std::move(blk));
  }
  norm_gamma_ = constant_param({D}, 1.0);
  norm_beta_ = constant_param({D}, 0.0);
  head_w_ = normal_param(init, "head.weight", {D, cfg_.n_classes});
  head_b_ = constant_param({cfg_.n_classes}, 0.0);
  if (cfg_.register_mode == RegisterMode::learnable) {
    auto stream = init.derive("registers");
    registers_ = reg::RegisterBank::learnable(cfg_.register_depth, cfg_.register_count, D,
                                              cfg_.depth, stream);
  } else if (cfg_.register_mode == RegisterMode::random) {
    registers_ = reg::RegisterBank::random(cfg_.register_depth, cfg_.register_count, D,
                                           cfg_.depth, cfg_.tau_init, cfg_.split_tau);
  }
}

TokenSequence ViT::patchify(const num::Tensor& images) const {
  const num::Tensor patches = extract_patches(images, cfg_);
  const std::size_t n = cfg_.num_patches();
  const std::size_t batch = patches.rows() / n;
  std::vector<std::size_t> pos_index(batch * n);
  for (std::size_t i = 0; i < pos_index.size(); ++i) pos_index[i] = i % n;
  const num::Tensor image_tokens =
      num::add(num::linear(patches, patch_w_, patch_b_), num::gather_rows(pos_, pos_index));
  const std::vector<std::size_t> cls_index(batch, 0);
  const num::Tensor parts[] = {num::gather_rows(cls_, cls_index), image_tokens};

  TokenSequence seq;
  seq.batch = batch;
  seq.length = 1 + n;
  seq.image_slots = n;
  std::vector<std::size_t> order(batch * (1 + n));
  seq.roles.resize(order.size());
  for (std::size_t b = 0; b < batch; ++b) {
    order[b * (1 + n)] = b;
    seq.roles[b * (1 + n)] = TokenRole::cls;
    for (std::size_t p = 0; p < n; ++p) {
      order[b * (1 + n) + 1 + p] = batch + b * n + p;
      seq.roles[b * (1 + n) + 1 + p] = TokenRole::image;
    }
  }
  seq.tokens = num::gather_rows(num::concat_rows(parts), order);
  return seq;
}

num::Tensor ViT::attention(std::size_t block, const TokenSequence& seq, AttentionRecord* record,
                           const AttentionNoise* noise) const {
  if (block >= blocks_.size()) {
    throw IndexError("block " + std::to_string(block) + " out of range [0, " +
                     std::to_string(blocks_.size()) + ")");
  }
  if (seq.dim() != cfg_.dim) {
    throw DimensionError("token width " + std::to_string(seq.dim()) + " vs model dim " +
                         std::to_string(cfg_.dim));
  }
  const BlockParams& p = blocks_[block];
  const num::Tensor h = num::layer_norm(seq.tokens, p.ln1_gamma, p.ln1_beta);
  const num::Tensor qkv = num::linear(h, p.w_qkv, p.b_qkv);
  const num::Tensor heads =
      multi_head_attention(qkv, seq.batch, seq.length, cfg_.heads, noise, record);
  if (record != nullptr) record->block = block;
  return num::linear(heads, p.w_out, p.b_out);
}

TokenSequence ViT::block_forward(std::size_t block, const TokenSequence& seq,
                                 AttentionRecord* record, const AttentionNoise* noise) const {
  const BlockParams& p = blocks_.at(block);
  TokenSequence out = seq;
  out.tokens = num::add(seq.tokens, attention(block, seq, record, noise));
  const num::Tensor h = num::layer_norm(out.tokens, p.ln2_gamma, p.ln2_beta);
  const num::Tensor mlp =
      num::linear(num::gelu(num::linear(h, p.w_fc1, p.b_fc1)), p.w_fc2, p.b_fc2);
  out.tokens = num::add(out.tokens, mlp);
  return out;
}

ForwardResult ViT::forward(const TokenSequence& input, const ForwardOptions& opt) const {
  if (input.dim() != cfg_.dim) {
    throw DimensionError("forward: token width " + std::to_string(input.dim()) +
                         " vs model dim " + std::to_string(cfg_.dim));
  }
  input.validate();
  const bool attach = opt.registers != nullptr && opt.registers->active() && cfg_.depth > 0;
  TokenSequence x = input;
  if (attach) x = opt.registers->attach(x, 0, opt.register_rng);
  if (opt.feature_sigma != 0.0) {
    if (opt.feature_rng == nullptr) throw Error("forward: feature noise without an RNG stream");
    const num::Tensor eps(x.tokens.shape(),
                          opt.feature_rng->normals(x.tokens.size(), opt.feature_sigma));
    x.tokens = num::add(x.tokens, eps);
  }

  ForwardResult result;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    if (attach && k > 0) x = opt.registers->attach(x, k, opt.register_rng);
    bool perturb = opt.attention_sigma != 0.0;
    if (perturb && !opt.attention_blocks.empty()) {
      perturb = std::find(opt.attention_blocks.begin(), opt.attention_blocks.end(), k) !=
                opt.attention_blocks.end();
    }
    std::optional<num::RngStream> block_rng;
    AttentionNoise noise;
    if (perturb) {
      if (opt.attention_rng == nullptr) throw Error("forward: attention noise without an RNG");
      block_rng.emplace(opt.attention_rng->derive("block", k));
      noise = {opt.attention_sigma, &*block_rng};
    }
    AttentionRecord record;
    x = block_forward(k, x, opt.capture_attention ? &record : nullptr,
                      perturb ? &noise : nullptr);
    if (opt.capture_attention) result.records.push_back(std::move(record));
  }

  std::vector<std::size_t> cls_rows(x.batch);
  for (std::size_t b = 0; b < x.batch; ++b) cls_rows[b] = x.row(b, 0);
  result.cls_feature =
      num::layer_norm(num::gather_rows(x.tokens, cls_rows), norm_gamma_, norm_beta_);
  result.logits = classify(result.cls_feature);
  return result;
}

ForwardResult ViT::forward_perturbed_attention(const TokenSequence& seq, double sigma,
                                               num::RngStream& rng,
                                               ForwardOptions options) const {
  if (!(sigma >= 0.0)) throw Error("forward_perturbed_attention: sigma must be >= 0");
  options.attention_sigma = sigma;
  options.attention_rng = &rng;
  return forward(seq, options);
}

num::Tensor ViT::features(const num::Tensor& images) const {
  num::NoGradGuard guard;
  const reg::RegisterBank bank =
      reg::registers_for_phase(reg::Phase::plain_eval, registers_, cfg_.dim, cfg_.depth);
  ForwardOptions opt;
  opt.registers = &bank;
  return forward(patchify(images), opt).cls_feature;
}

num::Tensor ViT::classify(const num::Tensor& cls_feature) const {
  return num::linear(cls_feature, head_w_, head_b_);
}

ForwardOptions ViT::source_options(num::RngStream* register_rng) const {
  ForwardOptions opt;
  opt.registers = &registers_;
  opt.register_rng = register_rng;
  return opt;
}

std::vector<num::NamedTensor> ViT::named_parameters() const {
  std::vector<num::NamedTensor> out = {
      {"patch_embed.weight", patch_w_}, {"patch_embed.bias", patch_b_}, {"cls", cls_},
      {"pos", pos_}};
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const std::string p = "blocks." + std::to_string(k) + ".";
    const BlockParams& b = blocks_[k];
    out.push_back({p + "ln1.gamma", b.ln1_gamma});
    out.push_back({p + "ln1.beta", b.ln1_beta});
    out.push_back({p + "w_qkv", b.w_qkv});
    out.push_back({p + "b_qkv", b.b_qkv});
    out.push_back({p + "w_out", b.w_out});
    out.push_back({p + "b_out", b.b_out});
    out.push_back({p + "ln2.gamma", b.ln2_gamma});
    out.push_back({p + "ln2.beta", b.ln2_beta});
    out.push_back({p + "w_fc1", b.w_fc1});
    out.push_back({p + "b_fc1", b.b_fc1});
    out.push_back({p + "w_fc2", b.w_fc2});
    out.push_back({p + "b_fc2", b.b_fc2});
  }
  out.push_back({"norm.gamma", norm_gamma_});
  out.push_back({"norm.beta", norm_beta_});
  out.push_back({"head.weight", head_w_});
  out.push_back({"head.bias", head_b_});
  for (auto& t : registers_.named_parameters("registers.")) out.push_back(std::move(t));
  return out;
}

std::vector<num::Tensor> ViT::backbone_parameters() const {
  std::vector<num::Tensor> out = {patch_w_, patch_b_, cls_, pos_};
  for (const auto& b : blocks_) {
    for (const auto& t : {b.ln1_gamma, b.ln1_beta, b.w_qkv, b.b_qkv, b.w_out, b.b_out,
                          b.ln2_gamma, b.ln2_beta, b.w_fc1, b.b_fc1, b.w_fc2, b.b_fc2}) {
      out.push_back(t);
    }
  }
  out.push_back(norm_gamma_);
  out.push_back(norm_beta_);
  return out;
}

std::vector<num::Tensor> ViT::head_parameters() const { return {head_w_, head_b_}; }

std::vector<num::Tensor> ViT::parameters() const {
  std::vector<num::Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

void ViT::set_backbone_trainable(bool flag) {
  for (auto& t : backbone_parameters()) t.set_requires_grad(flag);
}

ViT ViT::clone() const {
  ViT copy = *this;
  copy.patch_w_ = patch_w_.clone();
  copy.patch_b_ = patch_b_.clone();
  copy.cls_ = cls_.clone();
  copy.pos_ = pos_.clone();
  for (auto& b : copy.blocks_) {
    for (num::Tensor* t : {&b.ln1_gamma, &b.ln1_beta, &b.w_qkv, &b.b_qkv, &b.w_out, &b.b_out,
                           &b.ln2_gamma, &b.ln2_beta, &b.w_fc1, &b.b_fc1, &b.w_fc2, &b.b_fc2}) {
      *t = t->clone();
    }
  }
  copy.norm_gamma_ = norm_gamma_.clone();
  copy.norm_beta_ = norm_beta_.clone();
  copy.head_w_ = head_w_.clone();
  copy.head_b_ = head_b_.clone();
  copy.registers_ = registers_.clone();
  return copy;
}

void ViT::reset_head(const num::Tensor& weight, const num::Tensor& bias) {
  if (weight.rank() != 2 || weight.rows() != cfg_.dim || bias.rank() != 1 ||
      bias.size() != weight.cols()) {
    throw DimensionError("reset_head: weight " + num::to_string(weight.shape()) + ", bias " +
                         num::to_string(bias.shape()) + " for dim " + std::to_string(cfg_.dim));
  }
  head_w_ = weight;
  head_b_ = bias;
  cfg_.n_classes = bias.size();
}

void ViT::load_parameters(const std::vector<num::NamedTensor>& tensors) {
  std::map<std::string, const num::Tensor*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t.tensor).second) {
      throw IntegrityError("duplicate tensor " + t.name);
    }
  }
  auto mine = named_parameters();
  if (mine.size() != tensors.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(tensors.size()) +
                         " tensors, model expects " + std::to_string(mine.size()));
  }
  for (auto& nt : mine) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw IntegrityError("checkpoint lacks tensor " + nt.name);
    if (it->second->shape() != nt.tensor.shape()) {
      throw IntegrityError("tensor " + nt.name + " has shape " +
                           num::to_string(it->second->shape()) + ", expected " +
                           num::to_string(nt.tensor.shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), nt.tensor.mutable_data().begin());
  }
}

std::filesystem::path ViT::config_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  return p.replace_extension(".json");
}

void ViT::save(const std::filesystem::path& path) const {
  num::save_tensors(path, named_parameters());
  std::ofstream out(config_path(path), std::ios::trunc);
  if (!out) throw IoError("cannot open " + config_path(path).string() + " for writing");
  out << nlohmann::json(cfg_).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + config_path(path).string());
}

ViT ViT::load(const std::filesystem::path& path) {
  const auto cfg_file = config_path(path);
  std::ifstream in(cfg_file);
  if (!in) throw IoError("cannot open model config " + cfg_file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(cfg_file.string() + ": " + e.what());
  }
  ViTConfig cfg = j.get<ViTConfig>();
  num::RngStream init(0, "init");
  ViT model(cfg, init);
  model.load_parameters(num::load_tensors(path));
  return model;
}

}  // namespace rlab::vit
