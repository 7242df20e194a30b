#include "rlab/train/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"

namespace rlab::train {

namespace {

struct MethodName {
  Method method;
  std::string_view name;
};

constexpr MethodName kNames[] = {
    {Method::baseline, "baseline"},
    {Method::learnable_registers, "learnable_registers"},
    {Method::random_registers, "random_registers"},
    {Method::reap, "reap"},
    {Method::random_mask, "random_mask"},
    {Method::cluster_mask, "cluster_mask"},
    {Method::img_p, "img_p"},
    {Method::fea_p, "fea_p"},
    {Method::weight_p, "weight_p"},
    {Method::attn_p, "attn_p"},
};

std::size_t count_correct(const num::Tensor& logits, std::span<const int> labels) {
  std::size_t correct = 0;
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    correct += best == labels[i];
  }
  return correct;
}

double bank_tau(const vit::ViT& model) {
  return model.registers().mode() == vit::RegisterMode::random ? model.registers().tau_value()
                                                               : 0.0;
}

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& [method, name] : kNames) {
    if (method == m) return name;
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (const auto& [method, name] : kNames) {
    if (name == text) return method;
  }
  throw ConfigError("unknown method \"" + std::string(text) + "\"");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = [] {
    std::vector<Method> out;
    for (const auto& entry : kNames) out.push_back(entry.method);
    return out;
  }();
  return methods;
}

bool is_perturbation(Method m) {
  return m == Method::img_p || m == Method::fea_p || m == Method::weight_p ||
         m == Method::attn_p;
}

bool uses_reap_knobs(Method m) {
  return m == Method::reap || m == Method::random_mask || m == Method::cluster_mask;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr_backbone >= 0.0) || !(lr_head >= 0.0)) {
    throw ConfigError("train: learning rates must be >= 0");
  }
  if (!(perturb_sigma >= 0.0)) throw ConfigError("train: perturb_sigma must be >= 0");
  reap.validate();
}

vit::ViTConfig model_config_for(Method m, vit::ViTConfig base, const TrainConfig& cfg) {
  base.register_mode = vit::RegisterMode::none;
  switch (m) {
    case Method::learnable_registers:
      base.register_mode = vit::RegisterMode::learnable;
      break;
    case Method::random_registers:
      base.register_mode = vit::RegisterMode::random;
      break;
    case Method::reap:
      base.register_mode = vit::RegisterMode::random;
      base.register_depth = vit::RegisterDepth::shallow;
      base.register_count = cfg.reap.extra_registers;
      break;
    default:
      break;
  }
  return base;
}

EpochLog evaluate_source(const vit::ViT& model, const data::Dataset& ds, std::size_t batch_size) {
  num::NoGradGuard guard;
  const auto bank = reg::registers_for_phase(reg::Phase::plain_eval, model.registers(),
                                             model.config().dim, model.config().depth);
  vit::ForwardOptions opt;
  opt.registers = &bank;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, ds.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto labels = ds.labels(idx);
    const auto out = model.forward(model.patchify(ds.stack(idx)), opt);
    loss_sum += num::cross_entropy(out.logits, labels).item() * static_cast<double>(idx.size());
    correct += count_correct(out.logits, labels);
  }
  EpochLog log;
  log.loss = loss_sum / static_cast<double>(ds.size());
  log.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  log.tau = bank_tau(model);
  return log;
}

Trainer::Trainer(vit::ViT& model, Method method, const TrainConfig& cfg, std::uint64_t seed)
    : model_(model),
      method_(method),
      cfg_(cfg),
      root_(seed, "train"),
      adam_([&] {
        std::vector<num::Tensor> body = model.backbone_parameters();
        for (auto& t : model.register_parameters()) body.push_back(t);
        num::AdamHyper backbone;
        backbone.lr = cfg.lr_backbone;
        num::AdamHyper head;
        head.lr = cfg.lr_head;
        return std::vector<num::Adam::Group>{{body, backbone}, {model.head_parameters(), head}};
      }()) {
  cfg_.validate();
}

vit::ForwardResult Trainer::forward_batch(const num::Tensor& images,
                                          std::uint64_t step_index) const {
  const num::RngStream s = root_.derive("step", step_index);
  const double sigma = cfg_.perturb_sigma;
  num::RngStream register_rng = s.derive("registers");
  num::RngStream noise_rng = s.derive("noise");
  vit::ForwardOptions opt = model_.source_options(&register_rng);

  switch (method_) {
    case Method::reap: {
      auto reap_rng = s.derive("reap");
      return model_.forward(reap::reap_input(model_, images, cfg_.reap, reap_rng));
    }
    case Method::random_mask:
    case Method::cluster_mask: {
      auto mask_rng = s.derive("mask");
      const auto mode = method_ == Method::random_mask ? reap::MaskMode::random_mask
                                                       : reap::MaskMode::cluster_mask;
      return model_.forward(reap::ablation_mask_mode(mode, model_, images, cfg_.reap, mask_rng));
    }
    case Method::img_p:
      if (sigma != 0.0) {
        const num::Tensor eps(images.shape(), noise_rng.normals(images.size(), sigma));
        return model_.forward(model_.patchify(num::add(images, eps)), opt);
      }
      break;
    case Method::fea_p:
      opt.feature_sigma = sigma;
      opt.feature_rng = &noise_rng;
      break;
    case Method::attn_p:
      opt.attention_sigma = sigma;
      opt.attention_rng = &noise_rng;
      break;
    default:
      break;
  }
  return model_.forward(model_.patchify(images), opt);
}

std::pair<double, std::size_t> Trainer::step(const num::Tensor& images,
                                             std::span<const int> labels) {
  const bool weight_noise = method_ == Method::weight_p && cfg_.perturb_sigma != 0.0;
  std::vector<num::Tensor> params;
  std::vector<std::vector<double>> saved;
  if (weight_noise) {
    params = model_.parameters();
    auto rng = root_.derive("step", step_).derive("weights");
    for (auto& p : params) {
      saved.emplace_back(p.data().begin(), p.data().end());
      auto values = p.mutable_data();
      for (double& v : values) v += cfg_.perturb_sigma * rng.normal();
    }
  }
  const auto out = forward_batch(images, step_);
  const num::Tensor loss = num::cross_entropy(out.logits, labels);
  loss.backward();
  if (weight_noise) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(saved[i].begin(), saved[i].end(), params[i].mutable_data().begin());
    }
  }
  adam_.step();
  ++step_;
  return {loss.item(), count_correct(out.logits, labels)};
}

EpochLog Trainer::epoch(const data::Dataset& ds) {
  auto order_rng = root_.derive("epoch", epoch_);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);
  double loss_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const auto labels = ds.labels(idx);
    const auto [loss, hits] = step(ds.stack(idx), labels);
    loss_sum += loss * static_cast<double>(idx.size());
    correct += hits;
    seen += idx.size();
  }
  ++epoch_;
  EpochLog log;
  log.epoch = epoch_;
  log.loss = loss_sum / static_cast<double>(seen);
  log.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  log.tau = bank_tau(model_);
  return log;
}

TrainResult train_source(const data::Dataset& source, Method method, const vit::ViTConfig& base,
                         const TrainConfig& cfg, std::uint64_t seed,
                         const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  const vit::ViTConfig mc = model_config_for(method, base, cfg);
  if (source.class_count != mc.n_classes) {
    throw ConfigError("source dataset has " + std::to_string(source.class_count) +
                      " classes, model expects " + std::to_string(mc.n_classes));
  }
  num::RngStream init(seed, "init");
  TrainResult result{vit::ViT(mc, init), {}};
  EpochLog first = evaluate_source(result.model, source);
  result.log.push_back(first);
  if (on_epoch) on_epoch(first);
  Trainer trainer(result.model, method, cfg, seed);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    result.log.push_back(trainer.epoch(source));
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

}  // namespace rlab::train
