#include "rlab/fewshot/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/adam.hpp"
#include "rlab/numcore/ops.hpp"

namespace rlab::fewshot {

namespace {

std::vector<int> argmax_rows(const num::Tensor& logits) {
  std::vector<int> out(logits.rows());
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

num::Tensor features_in_chunks(const vit::ViT& model, const data::Dataset& ds,
                               std::span<const std::size_t> idx) {
  constexpr std::size_t kChunk = 64;
  std::vector<double> values;
  values.reserve(idx.size() * model.config().dim);
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const auto part = idx.subspan(start, std::min(kChunk, idx.size() - start));
    const auto f = model.features(ds.stack(part));
    values.insert(values.end(), f.data().begin(), f.data().end());
  }
  return num::Tensor({idx.size(), model.config().dim}, std::move(values));
}

num::Tensor select_rows(const num::Tensor& x, std::span<const std::size_t> rows) {
  num::NoGradGuard guard;
  return num::gather_rows(x, rows);
}

}  // namespace

Episode sample_episode(const data::Dataset& ds, std::size_t n, std::size_t k, std::size_t q,
                       num::RngStream& rng) {
  if (n == 0 || k == 0) throw CapacityError("sample_episode: n and k must be positive");
  std::vector<std::uint32_t> eligible;
  for (std::uint32_t c = 0; c < ds.class_count; ++c) {
    if (ds.indices_of(c).size() >= k + q) eligible.push_back(c);
  }
  if (eligible.size() < n) {
    throw CapacityError("sample_episode: " + std::to_string(n) + "-way " + std::to_string(k) +
                        "-shot with " + std::to_string(q) + " queries needs " +
                        std::to_string(n) + " classes of " + std::to_string(k + q) +
                        " images, dataset has " + std::to_string(eligible.size()));
  }
  Episode ep;
  ep.n_way = n;
  ep.k_shot = k;
  ep.q_queries = q;
  for (auto i : rng.sample_without_replacement(eligible.size(), n)) {
    ep.classes.push_back(eligible[i]);
  }
  for (std::size_t label = 0; label < n; ++label) {
    const auto pool = ds.indices_of(ep.classes[label]);
    const auto pick = rng.sample_without_replacement(pool.size(), k + q);
    for (std::size_t j = 0; j < k + q; ++j) {
      if (j < k) {
        ep.support.push_back(pool[pick[j]]);
        ep.support_labels.push_back(static_cast<int>(label));
      } else {
        ep.query.push_back(pool[pick[j]]);
        ep.query_labels.push_back(static_cast<int>(label));
      }
    }
  }
  return ep;
}

num::Tensor prototypes(const num::Tensor& support_feats, std::span<const int> labels,
                       std::size_t n_way) {
  if (support_feats.rank() != 2 || support_feats.rows() != labels.size()) {
    throw DimensionError("prototypes: " + std::to_string(labels.size()) + " labels for features " +
                         num::to_string(support_feats.shape()));
  }
  const std::size_t d = support_feats.cols();
  std::vector<double> sums(n_way * d, 0.0);
  std::vector<std::size_t> counts(n_way, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_way) {
      throw IndexError("prototypes: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(n_way) + ")");
    }
    const std::size_t c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += support_feats.at(i, j);
  }
  for (std::size_t c = 0; c < n_way; ++c) {
    if (counts[c] == 0) throw CapacityError("prototypes: class " + std::to_string(c) + " is empty");
    for (std::size_t j = 0; j < d; ++j) sums[c * d + j] /= static_cast<double>(counts[c]);
  }
  return num::Tensor({n_way, d}, std::move(sums));
}

std::vector<int> prototype_classify(const num::Tensor& support_feats,
                                    std::span<const int> support_labels,
                                    const num::Tensor& query_feats) {
  if (query_feats.rank() != 2 || query_feats.cols() != support_feats.cols()) {
    throw DimensionError("prototype_classify: query " + num::to_string(query_feats.shape()) +
                         " vs support " + num::to_string(support_feats.shape()));
  }
  const int max_label = *std::max_element(support_labels.begin(), support_labels.end());
  const num::Tensor protos =
      prototypes(support_feats, support_labels, static_cast<std::size_t>(max_label) + 1);
  const std::size_t n = protos.rows(), d = protos.cols();
  std::vector<int> out(query_feats.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = query_feats.at(i, j) - protos.at(c, j);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        out[i] = static_cast<int>(c);
      }
    }
  }
  return out;
}

num::Tensor prototype_logits(const num::Tensor& protos, const num::Tensor& query_feats) {
  // -|x - p|^2 = 2 x.p - |x|^2 - |p|^2
  const std::size_t m = query_feats.rows(), n = protos.rows();
  const num::Tensor cross = num::scale(num::matmul(query_feats, num::transpose(protos)), 2.0);
  const num::Tensor ones_d({protos.cols(), 1}, std::vector<double>(protos.cols(), 1.0));
  const num::Tensor xx = num::matmul(num::mul(query_feats, query_feats), ones_d);  // [m x 1]
  const num::Tensor pp = num::matmul(num::mul(protos, protos), ones_d);            // [n x 1]
  const num::Tensor ones_n({1, n}, std::vector<double>(n, 1.0));
  const num::Tensor ones_m({m, 1}, std::vector<double>(m, 1.0));
  return num::sub(num::sub(cross, num::matmul(xx, ones_n)),
                  num::matmul(ones_m, num::transpose(pp)));
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw DimensionError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::string_view to_string(FinetuneRegisters r) {
  switch (r) {
    case FinetuneRegisters::learnable: return "learnable";
    case FinetuneRegisters::none: return "none";
    case FinetuneRegisters::random: return "random";
  }
  return "?";
}

FinetuneRegisters parse_finetune_registers(std::string_view text) {
  if (text == "learnable") return FinetuneRegisters::learnable;
  if (text == "none") return FinetuneRegisters::none;
  if (text == "random") return FinetuneRegisters::random;
  throw ConfigError("unknown finetune register mode \"" + std::string(text) + "\"");
}

void FinetuneConfig::validate() const {
  if (!(lr_registers >= 0.0) || !(lr_head >= 0.0) || !(lr_backbone >= 0.0)) {
    throw ConfigError("finetune: learning rates must be >= 0");
  }
  if (register_count == 0 && registers != FinetuneRegisters::none) {
    throw ConfigError("finetune: register_count must be positive");
  }
  if (!(random_tau > 0.0)) throw ConfigError("finetune: random_tau must be > 0");
}

FinetuneResult finetune_episode(const vit::ViT& model, const data::Dataset& ds,
                                const Episode& episode, const FinetuneConfig& cfg,
                                num::RngStream& rng) {
  cfg.validate();
  const auto& mc = model.config();
  FinetuneResult result;
  result.model = model.clone();
  vit::ViT& m = result.model;
  m.set_backbone_trainable(cfg.unfreeze_backbone);
  for (auto& t : m.register_parameters()) t.set_requires_grad(false);

  const std::size_t count = model.registers().active() ? model.registers().count()
                                                       : cfg.register_count;
  switch (cfg.registers) {
    case FinetuneRegisters::learnable: {
      auto init = rng.derive("register_init");
      result.bank = reg::registers_for_phase(reg::Phase::target, model.registers(), mc.dim,
                                             mc.depth, &init, cfg.register_count);
      break;
    }
    case FinetuneRegisters::random:
      result.bank = reg::RegisterBank::random(vit::RegisterDepth::shallow, count, mc.dim,
                                              mc.depth, cfg.random_tau);
      break;
    case FinetuneRegisters::none:
      break;
  }
  const reg::RegisterBank& bank = result.bank;
  const bool with_bank = bank.active();

  const num::Tensor support_images = ds.stack(episode.support);
  const num::Tensor query_images = ds.stack(episode.query);
  const std::size_t n = episode.n_way;

  // Forward under the episode's bank; `stream` feeds random registers.
  auto encode = [&](const vit::TokenSequence& seq, num::RngStream stream) {
    num::RngStream local = stream;
    vit::ForwardOptions opt;
    opt.registers = with_bank ? &bank : nullptr;
    opt.register_rng = &local;
    return m.forward(seq, opt).cls_feature;
  };

  vit::TokenSequence support_tokens;
  {
    num::NoGradGuard guard;
    support_tokens = m.patchify(support_images);
  }
  num::Tensor cached_support;
  {
    num::NoGradGuard guard;
    cached_support = encode(support_tokens, rng.derive("head_init"));
  }

  const num::Tensor protos = prototypes(cached_support, episode.support_labels, n);
  const double dim = static_cast<double>(mc.dim);
  std::vector<double> w(mc.dim * n), b(n);
  for (std::size_t c = 0; c < n; ++c) {
    double sq = 0.0;
    for (std::size_t j = 0; j < mc.dim; ++j) {
      w[j * n + c] = 2.0 * protos.at(c, j) / dim;
      sq += protos.at(c, j) * protos.at(c, j);
    }
    b[c] = -sq / dim;
  }
  m.reset_head(num::Tensor({mc.dim, n}, std::move(w), true), num::Tensor({n}, std::move(b), true));

  std::vector<num::Adam::Group> groups;
  groups.push_back({m.head_parameters(), num::AdamHyper{cfg.lr_head}});
  if (with_bank) groups.push_back({bank.parameters(), num::AdamHyper{cfg.lr_registers}});
  if (cfg.unfreeze_backbone) {
    groups.push_back({m.backbone_parameters(), num::AdamHyper{cfg.lr_backbone}});
  }
  num::Adam adam(std::move(groups));

  // Without registers and with a frozen backbone the features never change.
  const bool features_fixed = !with_bank && !cfg.unfreeze_backbone;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    num::Tensor feats;
    if (features_fixed) {
      feats = cached_support;
    } else if (cfg.unfreeze_backbone) {
      feats = encode(m.patchify(support_images), rng.derive("step", t));
    } else {
      feats = encode(support_tokens, rng.derive("step", t));
    }
    const num::Tensor loss = num::cross_entropy(m.classify(feats), episode.support_labels);
    loss.backward();
    adam.step();
    result.final_loss = loss.item();
  }

  num::NoGradGuard guard;
  const num::Tensor support_feats =
      features_fixed ? cached_support : encode(m.patchify(support_images), rng.derive("support"));
  result.support_accuracy =
      accuracy(argmax_rows(m.classify(support_feats)), episode.support_labels);
  const num::Tensor query_feats = encode(m.patchify(query_images), rng.derive("query"));
  result.accuracy = accuracy(argmax_rows(m.classify(query_feats)), episode.query_labels);
  return result;
}

std::string_view to_string(EvalMode m) { return m == EvalMode::plain ? "plain" : "finetune"; }

EvalMode parse_eval_mode(std::string_view text) {
  if (text == "plain") return EvalMode::plain;
  if (text == "finetune") return EvalMode::finetune;
  throw ConfigError("unknown evaluation mode \"" + std::string(text) + "\"");
}

EvalSummary summarize(std::vector<EpisodeResult> results) {
  EvalSummary s;
  s.episodes = std::move(results);
  const double count = static_cast<double>(s.episodes.size());
  if (s.episodes.empty()) return s;
  double total = 0.0;
  for (const auto& r : s.episodes) total += r.accuracy;
  s.mean = total / count;
  if (s.episodes.size() > 1) {
    double sq = 0.0;
    for (const auto& r : s.episodes) sq += (r.accuracy - s.mean) * (r.accuracy - s.mean);
    s.stddev = std::sqrt(sq / (count - 1.0));
  }
  s.ci95 = 1.96 * s.stddev / std::sqrt(count);
  return s;
}

EvalSummary evaluate(const vit::ViT& model, const data::Dataset& ds, std::size_t n,
                     std::size_t k, std::size_t q, std::size_t episodes,
                     const num::RngStream& rng, EvalMode mode, const FinetuneConfig& finetune) {
  if (episodes == 0) throw ConfigError("evaluate: episodes must be >= 1");
  num::Tensor all_feats;
  if (mode == EvalMode::plain) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    all_feats = features_in_chunks(model, ds, all);
  }
  std::vector<EpisodeResult> results;
  results.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    const num::RngStream ep_rng = rng.derive("episode", i);
    auto sample_rng = ep_rng.derive("sample");
    const Episode ep = sample_episode(ds, n, k, q, sample_rng);
    double acc = 0.0;
    if (mode == EvalMode::plain) {
      const auto pred = prototype_classify(select_rows(all_feats, ep.support), ep.support_labels,
                                           select_rows(all_feats, ep.query));
      acc = accuracy(pred, ep.query_labels);
    } else {
      auto ft_rng = ep_rng.derive("finetune");
      acc = finetune_episode(model, ds, ep, finetune, ft_rng).accuracy;
    }
    results.push_back({i, acc});
  }
  return summarize(std::move(results));
}

}  // namespace rlab::fewshot
