#include "rlab/analysis/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"

namespace rlab::analysis {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_matrix(const num::Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a matrix, got " + num::to_string(t.shape()));
  Mat m(t.rows(), t.cols());
  std::copy(t.data().begin(), t.data().end(), m.data());
  return m;
}

Mat centered(const Mat& k) {
  const Mat rc = k.rowwise() - k.colwise().mean();
  return rc.colwise() - rc.rowwise().mean();
}

double hsic_of(const Mat& k, const Mat& l) {
  const double n = static_cast<double>(k.rows());
  return centered(k).cwiseProduct(centered(l)).sum() / ((n - 1.0) * (n - 1.0));
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

}  // namespace

ProbeBatch source_batch(const data::Dataset& ds, std::span<const std::size_t> idx,
                        std::string domain) {
  ProbeBatch b;
  b.images = ds.stack(idx);
  b.labels = ds.labels(idx);
  b.domain = std::move(domain);
  return b;
}

ProbeBatch episode_batch(const data::Dataset& ds, const fewshot::Episode& episode,
                         std::string domain) {
  std::vector<std::size_t> idx = episode.support;
  idx.insert(idx.end(), episode.query.begin(), episode.query.end());
  ProbeBatch b;
  b.images = ds.stack(idx);
  b.labels = episode.support_labels;
  b.labels.insert(b.labels.end(), episode.query_labels.begin(), episode.query_labels.end());
  b.support = episode.support.size();
  b.n_way = episode.n_way;
  b.domain = std::move(domain);
  return b;
}

double probe_loss(const vit::ViT& model, const ProbeBatch& batch, double sigma,
                  num::RngStream* rng, const std::vector<std::size_t>& blocks) {
  num::NoGradGuard guard;
  const auto& mc = model.config();
  const reg::RegisterBank bank =
      reg::registers_for_phase(reg::Phase::plain_eval, model.registers(), mc.dim, mc.depth);
  vit::ForwardOptions opt;
  opt.registers = &bank;
  opt.attention_sigma = sigma;
  opt.attention_rng = rng;
  opt.attention_blocks = blocks;
  const auto out = model.forward(model.patchify(batch.images), opt);
  if (batch.support == 0) return num::cross_entropy(out.logits, batch.labels).item();

  if (batch.support >= batch.labels.size()) {
    throw DimensionError("probe_loss: episode batch has no queries");
  }
  std::vector<std::size_t> s(batch.support), q(batch.labels.size() - batch.support);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i;
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = batch.support + i;
  const std::span<const int> labels(batch.labels);
  const num::Tensor protos = fewshot::prototypes(num::gather_rows(out.cls_feature, s),
                                                 labels.first(batch.support), batch.n_way);
  const num::Tensor logits =
      fewshot::prototype_logits(protos, num::gather_rows(out.cls_feature, q));
  return num::cross_entropy(logits, labels.subspan(batch.support)).item();
}

double SharpnessReport::sharpness_at(std::size_t sigma_index, std::size_t k) const {
  const auto& row = increases.at(sigma_index);
  if (k == 0 || k > row.size()) {
    throw IndexError("sharpness_at: k = " + std::to_string(k) + " outside [1, " +
                     std::to_string(row.size()) + "]");
  }
  return *std::max_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k));
}

SharpnessReport attention_sharpness(const vit::ViT& model, const ProbeBatch& batch,
                                    const std::vector<double>& sigmas, std::size_t draws,
                                    const num::RngStream& rng,
                                    const std::vector<std::size_t>& blocks) {
  if (draws == 0) throw ConfigError("attention_sharpness: draws must be >= 1");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0) || (i > 0 && sigmas[i] < sigmas[i - 1])) {
      throw ConfigError("attention_sharpness: sigmas must be >= 0 and ascending");
    }
  }
  SharpnessReport r;
  r.domain = batch.domain;
  r.sigmas = sigmas;
  r.draws = draws;
  r.blocks = blocks;
  r.base_loss = probe_loss(model, batch, 0.0, nullptr, blocks);
  for (double sigma : sigmas) {
    std::vector<double> row(draws, 0.0);
    if (sigma != 0.0) {
      for (std::size_t d = 0; d < draws; ++d) {
        num::RngStream z = rng.derive("draw", d);
        row[d] = probe_loss(model, batch, sigma, &z, blocks) - r.base_loss;
      }
    }
    r.sharpness.push_back(*std::max_element(row.begin(), row.end()));
    r.increases.push_back(std::move(row));
  }
  return r;
}

std::vector<double> geometric_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo) || count == 0) {
    throw ConfigError("geometric_grid: need 0 < lo <= hi and count >= 1");
  }
  if (count == 1) return {lo};
  std::vector<double> out(count);
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) out[i] = lo * std::exp(step * static_cast<double>(i));
  out.front() = lo;
  out.back() = hi;
  return out;
}

double hsic(const num::Tensor& K, const num::Tensor& L) {
  if (K.rank() != 2 || K.rows() != K.cols() || K.shape() != L.shape()) {
    throw DimensionError("hsic: need two equal square matrices, got " +
                         num::to_string(K.shape()) + " and " + num::to_string(L.shape()));
  }
  if (K.rows() < 2) throw DegenerateInputError("hsic: need N >= 2");
  return hsic_of(to_matrix(K), to_matrix(L));
}

double cka(const num::Tensor& X, const num::Tensor& Y) {
  if (X.rank() != 2 || Y.rank() != 2 || X.rows() != Y.rows()) {
    throw DimensionError("cka: representations " + num::to_string(X.shape()) + " and " +
                         num::to_string(Y.shape()) + " do not cover the same items");
  }
  if (X.rows() < 2) throw DegenerateInputError("cka: need N >= 2");
  const Mat x = to_matrix(X), y = to_matrix(Y);
  // Constant features leave nothing after centering.
  auto degenerate = [](const Mat& m) {
    const Mat c = m.rowwise() - m.colwise().mean();
    return c.norm() <= 1e-12 * m.norm() || c.norm() == 0.0;
  };
  if (degenerate(x) || degenerate(y)) {
    throw UndefinedSimilarityError("cka: a representation is constant across items");
  }
  const Mat kx = x * x.transpose(), ky = y * y.transpose();
  const double xy = hsic_of(kx, ky), xx = hsic_of(kx, kx), yy = hsic_of(ky, ky);
  if (!(xx > 0.0) || !(yy > 0.0)) {
    throw UndefinedSimilarityError("cka: zero self-HSIC");
  }
  return std::clamp(xy / std::sqrt(xx * yy), 0.0, 1.0);
}

double domain_similarity(const vit::ViT& model, const num::Tensor& source_images,
                         const num::Tensor& target_images) {
  if (source_images.rank() != 4 || target_images.rank() != 4) {
    throw DimensionError("domain_similarity: need image batches, got " +
                         num::to_string(source_images.shape()) + " and " +
                         num::to_string(target_images.shape()));
  }
  // Aligned on the channel dimension: each feature channel is one sample,
  // so the two domains need not share images or even batch size.
  num::NoGradGuard guard;
  return cka(num::transpose(model.features(source_images)),
             num::transpose(model.features(target_images)));
}

num::Tensor export_attention_heatmap(const vit::ViT& model, const num::Tensor& image) {
  num::NoGradGuard guard;
  const auto& mc = model.config();
  const reg::RegisterBank bank =
      reg::registers_for_phase(reg::Phase::plain_eval, model.registers(), mc.dim, mc.depth);
  vit::ForwardOptions opt;
  opt.registers = &bank;
  opt.capture_attention = true;
  const num::Tensor batch = image.rank() == 3 ? image.reshape({1, image.dim(0), image.dim(1),
                                                               image.dim(2)})
                                              : image;
  if (batch.rank() != 4 || batch.dim(0) != 1) {
    throw DimensionError("export_attention_heatmap: expected one image, got " +
                         num::to_string(image.shape()));
  }
  const auto out = model.forward(model.patchify(batch), opt);
  const vit::AttentionRecord& rec = out.records.back();
  const std::size_t grid = mc.grid(), n = mc.num_patches();
  std::vector<double> values(n, 0.0);
  for (std::size_t h = 0; h < rec.heads(); ++h) {
    for (std::size_t p = 0; p < n; ++p) values[p] += rec.at(0, h, 0, 1 + p);
  }
  for (double& v : values) v /= static_cast<double>(rec.heads());
  return num::Tensor({grid, grid}, std::move(values));
}

std::string heatmap_csv(const num::Tensor& heatmap) {
  std::string out;
  for (std::size_t i = 0; i < heatmap.rows(); ++i) {
    for (std::size_t j = 0; j < heatmap.cols(); ++j) {
      if (j > 0) out += ',';
      append_double(out, heatmap.at(i, j));
    }
    out += '\n';
  }
  return out;
}

train::TrainResult perturbed_training(train::Method mode, double sigma,
                                      const data::Dataset& source, const vit::ViTConfig& base,
                                      train::TrainConfig cfg, std::uint64_t seed) {
  if (!train::is_perturbation(mode)) {
    throw ConfigError("perturbed_training: " + std::string(train::to_string(mode)) +
                      " is not a perturbation family");
  }
  cfg.perturb_sigma = sigma;
  return train::train_source(source, mode, base, cfg, seed);
}

void to_json(nlohmann::json& j, const SharpnessReport& r) {
  j = nlohmann::json{{"schema_version", kReportSchemaVersion},
                     {"kind", "sharpness"},
                     {"domain", r.domain},
                     {"sigmas", r.sigmas},
                     {"draws", r.draws},
                     {"blocks", r.blocks},
                     {"base_loss", r.base_loss},
                     {"sharpness", r.sharpness},
                     {"increases", r.increases}};
}

void to_json(nlohmann::json& j, const CkaReport& r) {
  j = nlohmann::json{{"schema_version", kReportSchemaVersion},
                     {"kind", "cka"},
                     {"source_batch", r.source_batch},
                     {"target_batch", r.target_batch},
                     {"layer", r.layer},
                     {"value", r.value}};
}

}  // namespace rlab::analysis
