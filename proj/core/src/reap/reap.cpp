#include "rlab/reap/reap.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"
#include "rlab/registers/register_bank.hpp"

namespace rlab::reap {

namespace {

std::size_t round_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
}

// Channel means of the patches of one image stored at `px` ([C x S x S]).
std::vector<double> means_of(const double* px, std::size_t C, std::size_t S, std::size_t P) {
  const std::size_t G = S / P;
  std::vector<double> out(G * G * C, 0.0);
  const double inv = 1.0 / static_cast<double>(P * P);
  for (std::size_t gy = 0; gy < G; ++gy) {
    for (std::size_t gx = 0; gx < G; ++gx) {
      for (std::size_t c = 0; c < C; ++c) {
        double total = 0.0;
        for (std::size_t dy = 0; dy < P; ++dy) {
          const double* row = px + (c * S + gy * P + dy) * S + gx * P;
          for (std::size_t dx = 0; dx < P; ++dx) total += row[dx];
        }
        out[(gy * G + gx) * C + c] = total * inv;
      }
    }
  }
  return out;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void ReapConfig::validate() const {
  if (!(anchor_ratio > 0.0 && anchor_ratio < 1.0)) {
    throw ConfigError("reap: anchor_ratio must lie in (0, 1), got " + std::to_string(anchor_ratio));
  }
  if (!(drop_ratio > 0.0 && drop_ratio < 1.0)) {
    throw ConfigError("reap: drop_ratio must lie in (0, 1), got " + std::to_string(drop_ratio));
  }
  if (anchor_ratio < 0.6) {
    spdlog::warn("reap: anchor_ratio {} is below the usual lower bound 0.6", anchor_ratio);
  }
}

std::vector<std::size_t> ReapPlan::replaced_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (replace_mask[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ReapPlan::kept_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!replace_mask[i]) out.push_back(i);
  }
  return out;
}

void to_json(nlohmann::json& j, const ReapPlan& plan) {
  std::vector<int> mask(plan.replace_mask.begin(), plan.replace_mask.end());
  j = nlohmann::json{{"n", plan.n},
                     {"anchors", plan.anchors},
                     {"threshold", plan.threshold},
                     {"replace_mask", mask},
                     {"replaced_count", plan.replaced_count},
                     {"target_count", plan.target_count}};
}

num::Tensor patch_means(const num::Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2) || patch_size == 0 ||
      image.dim(1) % patch_size != 0) {
    throw DimensionError("patch_means: image " + num::to_string(image.shape()) +
                         " is not square or not divisible into " + std::to_string(patch_size) +
                         "-pixel patches");
  }
  const std::size_t C = image.dim(0), S = image.dim(1), G = S / patch_size;
  return num::Tensor({G * G, C}, means_of(image.data().data(), C, S, patch_size));
}

std::vector<std::size_t> select_anchors(std::size_t n, double anchor_ratio,
                                        num::RngStream& rng) {
  if (!(anchor_ratio > 0.0 && anchor_ratio < 1.0)) {
    throw ConfigError("select_anchors: anchor_ratio must lie in (0, 1), got " +
                      std::to_string(anchor_ratio));
  }
  if (n < 2) throw CapacityError("select_anchors: need at least 2 patches");
  const std::size_t a = std::clamp<std::size_t>(round_count(anchor_ratio, n), 1, n - 1);
  auto idx = rng.sample_without_replacement(n, a);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double cosine_similarity(std::span<const double> x, std::span<const double> a) {
  if (x.size() != a.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(a.size()));
  }
  const double nx = norm(x), na = norm(a);
  if (nx == 0.0 || na == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * a[i];
  return std::clamp(dot / (nx * na), -1.0, 1.0);
}

ReapPlan build_clusters(const num::Tensor& means, std::span<const std::size_t> anchors,
                        double drop_ratio) {
  if (means.rank() != 2) throw DimensionError("build_clusters: means must be [n x c]");
  if (!(drop_ratio > 0.0 && drop_ratio < 1.0)) {
    throw ConfigError("build_clusters: drop_ratio must lie in (0, 1), got " +
                      std::to_string(drop_ratio));
  }
  const std::size_t n = means.rows(), c = means.cols();
  ReapPlan plan;
  plan.n = n;
  plan.anchors.assign(anchors.begin(), anchors.end());
  std::sort(plan.anchors.begin(), plan.anchors.end());
  if (plan.anchors.empty() ||
      std::adjacent_find(plan.anchors.begin(), plan.anchors.end()) != plan.anchors.end() ||
      plan.anchors.back() >= n) {
    throw IndexError("build_clusters: anchors must be distinct indices below " +
                     std::to_string(n));
  }
  plan.target_count = round_count(drop_ratio, n);

  auto row = [&](std::size_t i) { return means.data().subspan(i * c, c); };
  std::vector<std::uint8_t> is_anchor(n, 0);
  for (auto j : plan.anchors) is_anchor[j] = 1;

  bool zero_norm = false;
  for (std::size_t i = 0; i < n; ++i) zero_norm = zero_norm || norm(row(i)) == 0.0;
  if (zero_norm) spdlog::debug("reap: zero-norm patch mean; its similarities are 0");

  // All observed anchor-patch similarities are threshold candidates; a
  // patch's membership only depends on its best similarity to any anchor.
  std::vector<double> candidates;
  candidates.reserve(plan.anchors.size() * n);
  plan.best_similarity.assign(n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : plan.anchors) {
      const double s = cosine_similarity(row(i), row(j));
      candidates.push_back(s);
      plan.best_similarity[i] = std::max(plan.best_similarity[i], s);
    }
  }
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  auto union_at = [&](double t) {
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i < n; ++i) mask[i] = is_anchor[i] || plan.best_similarity[i] >= t;
    return mask;
  };
  plan.threshold = candidates.back();
  for (double t : candidates) {
    const auto mask = union_at(t);
    if (static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)) >= plan.target_count) {
      plan.threshold = t;
      break;
    }
  }
  plan.replace_mask = union_at(plan.threshold);

  std::vector<std::size_t> releasable;
  for (std::size_t i = 0; i < n; ++i) {
    if (plan.replace_mask[i] && !is_anchor[i]) releasable.push_back(i);
  }
  std::stable_sort(releasable.begin(), releasable.end(), [&](std::size_t a, std::size_t b) {
    return plan.best_similarity[a] < plan.best_similarity[b];
  });
  std::size_t count = static_cast<std::size_t>(
      std::count(plan.replace_mask.begin(), plan.replace_mask.end(), 1));
  for (std::size_t r = 0; r < releasable.size() && count > plan.target_count; ++r) {
    plan.replace_mask[releasable[r]] = 0;
    --count;
  }
  if (count > plan.target_count) {
    spdlog::warn("reap: {} anchors exceed the drop target {}; replacing the anchors only",
                 plan.anchors.size(), plan.target_count);
  }
  plan.replaced_count = count;
  return plan;
}

ReapPlan plan_image(const num::Tensor& image, std::size_t patch_size, const ReapConfig& cfg,
                    num::RngStream& rng) {
  const num::Tensor means = patch_means(image, patch_size);
  const auto anchors = select_anchors(means.rows(), cfg.anchor_ratio, rng);
  return build_clusters(means, anchors, cfg.drop_ratio);
}

vit::TokenSequence apply_replacement(const vit::TokenSequence& seq,
                                     std::span<const ReapPlan> plans, const num::Tensor& tau,
                                     num::RngStream& rng) {
  if (plans.size() != seq.batch) {
    throw DimensionError("apply_replacement: " + std::to_string(plans.size()) + " plans for " +
                         std::to_string(seq.batch) + " sequences");
  }
  std::size_t total = 0;
  for (const auto& p : plans) {
    if (p.replace_mask.size() != seq.image_slots) {
      throw DimensionError("apply_replacement: mask of length " +
                           std::to_string(p.replace_mask.size()) + " for " +
                           std::to_string(seq.image_slots) + " image slots");
    }
    total += static_cast<std::size_t>(std::count(p.replace_mask.begin(), p.replace_mask.end(), 1));
  }
  if (total == 0) return seq;
  const num::Tensor noise = reg::sample_random_registers(total, seq.dim(), tau, rng);
  const std::size_t base = seq.tokens.rows();
  std::vector<std::size_t> index(seq.batch * seq.length);
  std::vector<vit::TokenRole> roles = seq.roles;
  std::size_t next = 0;
  for (std::size_t b = 0; b < seq.batch; ++b) {
    for (std::size_t i = 0; i < seq.length; ++i) {
      const bool replaced = i >= 1 && i <= seq.image_slots && plans[b].replace_mask[i - 1];
      index[seq.row(b, i)] = replaced ? base + next++ : seq.row(b, i);
      if (replaced) roles[seq.row(b, i)] = vit::TokenRole::reg;
    }
  }
  return vit::splice(seq, noise, index, seq.length, std::move(roles));
}

namespace {

std::vector<ReapPlan> plan_batch(const vit::ViT& model, const num::Tensor& images,
                                 const ReapConfig& cfg, num::RngStream& rng) {
  const auto& vc = model.config();
  const std::size_t batch = images.rank() == 4 ? images.dim(0) : 1;
  const std::size_t per_image = vc.channels * vc.image_size * vc.image_size;
  if (images.size() != batch * per_image) {
    throw DimensionError("reap: images " + num::to_string(images.shape()) +
                         " do not match the model geometry");
  }
  std::vector<ReapPlan> plans;
  plans.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto stream = rng.derive("anchors", b);
    const auto means = means_of(images.data().data() + b * per_image, vc.channels,
                                vc.image_size, vc.patch_size);
    const num::Tensor m({vc.num_patches(), vc.channels}, means);
    const auto anchors = select_anchors(vc.num_patches(), cfg.anchor_ratio, stream);
    plans.push_back(build_clusters(m, anchors, cfg.drop_ratio));
  }
  return plans;
}

}  // namespace

vit::TokenSequence reap_input(const vit::ViT& model, const num::Tensor& images,
                              const ReapConfig& cfg, num::RngStream& rng,
                              std::vector<ReapPlan>* plans_out) {
  auto plans = plan_batch(model, images, cfg, rng);
  const auto& bank = model.registers();
  const bool has_bank = bank.mode() == vit::RegisterMode::random;
  const num::Tensor fixed_tau = num::Tensor::scalar(model.config().tau_init);
  const num::Tensor replace_tau = has_bank ? bank.replace_tau() : fixed_tau;
  const num::Tensor tau = has_bank ? bank.tau() : fixed_tau;

  auto replace_rng = rng.derive("replace");
  vit::TokenSequence seq = apply_replacement(model.patchify(images), plans, replace_tau,
                                             replace_rng);
  if (cfg.extra_registers > 0) {
    auto reg_rng = rng.derive("registers");
    const num::Tensor extra =
        reg::sample_random_registers(seq.batch * cfg.extra_registers, seq.dim(), tau, reg_rng);
    seq = vit::append_registers(seq, extra, cfg.extra_registers);
  }
  if (plans_out != nullptr) *plans_out = std::move(plans);
  return seq;
}

vit::TokenSequence ablation_mask_mode(MaskMode mode, const vit::ViT& model,
                                      const num::Tensor& images, const ReapConfig& cfg,
                                      num::RngStream& rng) {
  auto plans = plan_batch(model, images, cfg, rng);
  const std::size_t n = model.config().num_patches();
  if (mode == MaskMode::random_mask) {
    for (std::size_t b = 0; b < plans.size(); ++b) {
      auto stream = rng.derive("random_mask", b);
      const auto drop = stream.sample_without_replacement(n, plans[b].replaced_count);
      std::fill(plans[b].replace_mask.begin(), plans[b].replace_mask.end(), 0);
      for (auto i : drop) plans[b].replace_mask[i] = 1;
    }
  }
  const vit::TokenSequence full = model.patchify(images);
  // Equal replaced counts give every sequence the same kept length.
  const std::size_t kept = n - plans.front().replaced_count;
  const std::size_t L = 1 + kept;
  std::vector<std::size_t> index;
  index.reserve(full.batch * L);
  std::vector<vit::TokenRole> roles;
  roles.reserve(full.batch * L);
  for (std::size_t b = 0; b < full.batch; ++b) {
    if (n - plans[b].replaced_count != kept) {
      throw IntegrityError("ablation_mask_mode: unequal kept counts within a batch");
    }
    index.push_back(full.row(b, 0));
    roles.push_back(vit::TokenRole::cls);
    for (auto i : plans[b].kept_indices()) {
      index.push_back(full.row(b, 1 + i));
      roles.push_back(vit::TokenRole::image);
    }
  }
  vit::TokenSequence out;
  out.batch = full.batch;
  out.length = L;
  out.image_slots = kept;
  out.roles = std::move(roles);
  out.tokens = num::gather_rows(full.tokens, index);
  out.validate();
  return out;
}

}  // namespace rlab::reap
