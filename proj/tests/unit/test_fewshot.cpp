#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rlab/errors.hpp"
#include "rlab/fewshot/fewshot.hpp"
#include "rlab/numcore/grad_check.hpp"
#include "rlab/numcore/ops.hpp"

using namespace rlab;
using num::Tensor;

namespace {

const data::Dataset& tiny_domain() {
  static const data::Dataset ds = [] {
    data::DomainSpec s;
    s.name = "fs";
    s.class_count = 5;
    s.images_per_class = 8;
    s.image_size = 8;
    s.seed = 4;
    return data::generate_domain(s);
  }();
  return ds;
}

vit::ViT tiny_model() {
  vit::ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.n_classes = 5;
  num::RngStream init(2, "init");
  return vit::ViT(c, init);
}

double sqdist(const Tensor& a, std::size_t i, const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t d = 0; d < p.size(); ++d) s += (a.at(i, d) - p[d]) * (a.at(i, d) - p[d]);
  return s;
}

}  // namespace

TEST(Episode, SupportAndQueryAreDisjointAndLabelled) {
  const auto& ds = tiny_domain();
  num::RngStream r(1, "ep");
  for (int t = 0; t < 50; ++t) {
    const auto e = fewshot::sample_episode(ds, 3, 2, 4, r);
    ASSERT_EQ(e.classes.size(), 3u);
    EXPECT_EQ(std::set<std::uint32_t>(e.classes.begin(), e.classes.end()).size(), 3u);
    ASSERT_EQ(e.support.size(), 6u);
    ASSERT_EQ(e.query.size(), 12u);
    std::set<std::size_t> all(e.support.begin(), e.support.end());
    all.insert(e.query.begin(), e.query.end());
    EXPECT_EQ(all.size(), 18u);
    for (std::size_t i = 0; i < e.support.size(); ++i)
      EXPECT_EQ(ds.records[e.support[i]].label, e.classes[e.support_labels[i]]);
    for (std::size_t i = 0; i < e.query.size(); ++i)
      EXPECT_EQ(ds.records[e.query[i]].label, e.classes[e.query_labels[i]]);
  }
}

TEST(Episode, TooSmallDatasetIsACapacityError) {
  num::RngStream r(1, "ep");
  EXPECT_THROW(fewshot::sample_episode(tiny_domain(), 6, 1, 1, r), CapacityError);
  EXPECT_THROW(fewshot::sample_episode(tiny_domain(), 2, 5, 4, r), CapacityError);
}

TEST(Prototypes, ClassMeansAndErrors) {
  num::RngStream r(2, "p");
  const Tensor f({6, 3}, r.normals(18));
  const std::vector<int> labels{1, 0, 1, 2, 0, 2};
  const Tensor p = fewshot::prototypes(f, labels, 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t d = 0; d < 3; ++d) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i)
        if (labels[i] == c) s += f.at(i, d);
      EXPECT_NEAR(p.at(c, d), s / 2.0, 1e-15);
    }
  const std::vector<int> bad{0, 0, 0, 0, 0, 3};
  EXPECT_THROW(fewshot::prototypes(f, bad, 3), IndexError);
  const std::vector<int> gap{0, 0, 0, 2, 2, 2};
  EXPECT_THROW(fewshot::prototypes(f, gap, 3), CapacityError);
}

TEST(Prototypes, ClassifyIsNearestMeanWithLowTies) {
  num::RngStream r(3, "c");
  const Tensor s({8, 4}, r.normals(32));
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const Tensor q({20, 4}, r.normals(80));
  const auto pred = fewshot::prototype_classify(s, labels, q);
  const Tensor p = fewshot::prototypes(s, labels, 4);
  for (std::size_t i = 0; i < 20; ++i) {
    int best = 0;
    double bd = 1e300;
    for (int c = 0; c < 4; ++c) {
      std::vector<double> pc(4);
      for (std::size_t d = 0; d < 4; ++d) pc[d] = p.at(c, d);
      const double dist = sqdist(q, i, pc);
      if (dist < bd) bd = dist, best = c;
    }
    EXPECT_EQ(pred[i], best);
  }
  // Identical prototypes: the lower class wins.
  const Tensor twin({2, 2}, {1.0, 1.0, 1.0, 1.0});
  const std::vector<int> tl{0, 1};
  EXPECT_EQ(fewshot::prototype_classify(twin, tl, Tensor({1, 2}, {0.0, 0.0}))[0], 0);
}

TEST(Prototypes, LogitsAreNegativeSquaredDistances) {
  num::RngStream r(4, "l");
  const Tensor p({3, 5}, r.normals(15), true);
  const Tensor q({4, 5}, r.normals(20), true);
  const Tensor l = fewshot::prototype_logits(p, q);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> pc(5);
      for (std::size_t d = 0; d < 5; ++d) pc[d] = p.at(c, d);
      EXPECT_NEAR(l.at(i, c), -sqdist(q, i, pc), 1e-12);
    }
  const std::vector<int> y{0, 2, 1, 1};
  std::vector<Tensor> params{p, q};
  const auto res = num::grad_check_params(
      [&] { return num::cross_entropy(fewshot::prototype_logits(p, q), y); }, params);
  EXPECT_LT(res.max_relative_error, 1e-6);
}

TEST(Summary, SampleStdAndInterval) {
  std::vector<fewshot::EpisodeResult> rs;
  const double acc[] = {0.2, 0.4, 0.9, 0.5};
  for (std::size_t i = 0; i < 4; ++i) rs.push_back({i, acc[i]});
  const auto s = fewshot::summarize(rs);
  const double mean = 0.5;
  double ss = 0.0;
  for (double a : acc) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / 3.0);
  EXPECT_NEAR(s.mean, mean, 1e-15);
  EXPECT_NEAR(s.stddev, sd, 1e-15);
  EXPECT_NEAR(s.ci95, 1.96 * sd / 2.0, 1e-15);
  EXPECT_NEAR(fewshot::accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 0, 3}), 2.0 / 3.0,
              1e-15);
}

TEST(Finetune, ParsingAndValidation) {
  EXPECT_EQ(fewshot::parse_finetune_registers("random"), fewshot::FinetuneRegisters::random);
  EXPECT_THROW(fewshot::parse_finetune_registers("deep"), ConfigError);
  EXPECT_EQ(fewshot::parse_eval_mode("finetune"), fewshot::EvalMode::finetune);
  EXPECT_THROW(fewshot::parse_eval_mode("linear"), ConfigError);
  fewshot::FinetuneConfig c;
  c.lr_head = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.random_tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// With no steps and no registers the prototype-initialised head reproduces
// nearest-prototype classification exactly.
TEST(Finetune, ZeroStepsMatchesPlainEvaluation) {
  const auto model = tiny_model();
  const num::RngStream rng(9, "eval");
  const auto plain =
      fewshot::evaluate(model, tiny_domain(), 3, 2, 3, 4, rng, fewshot::EvalMode::plain);
  fewshot::FinetuneConfig ft;
  ft.steps = 0;
  ft.registers = fewshot::FinetuneRegisters::none;
  const auto tuned =
      fewshot::evaluate(model, tiny_domain(), 3, 2, 3, 4, rng, fewshot::EvalMode::finetune, ft);
  ASSERT_EQ(plain.episodes.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_EQ(plain.episodes[i].accuracy, tuned.episodes[i].accuracy) << i;
}

TEST(Finetune, StepsLowerSupportLossAndLeaveSourceUntouched) {
  const auto model = tiny_model();
  num::RngStream r(5, "ep");
  const auto e = fewshot::sample_episode(tiny_domain(), 3, 2, 3, r);
  fewshot::FinetuneConfig ft;
  ft.lr_head = 0.05;
  ft.lr_registers = 0.05;
  ft.register_count = 2;
  const auto before = model.parameters()[0].data()[0];
  // final_loss is the loss seen by the last step, so one step reports the
  // starting loss.
  ft.steps = 1;
  num::RngStream a(1, "ft"), b(1, "ft");
  const auto first = fewshot::finetune_episode(model, tiny_domain(), e, ft, a);
  ft.steps = 30;
  const auto many = fewshot::finetune_episode(model, tiny_domain(), e, ft, b);
  EXPECT_LT(many.final_loss, first.final_loss);
  EXPECT_EQ(many.bank.count(), 2u);
  EXPECT_EQ(model.parameters()[0].data()[0], before);
}

TEST(Evaluate, EpisodesDoNotDependOnHowManyRun) {
  const auto model = tiny_model();
  const num::RngStream rng(3, "eval");
  const auto few = fewshot::evaluate(model, tiny_domain(), 3, 1, 2, 3, rng, fewshot::EvalMode::plain);
  const auto more =
      fewshot::evaluate(model, tiny_domain(), 3, 1, 2, 7, rng, fewshot::EvalMode::plain);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(few.episodes[i].accuracy, more.episodes[i].accuracy);
}
