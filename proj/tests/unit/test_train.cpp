#include <gtest/gtest.h>

#include <cstring>

#include "rlab/errors.hpp"
#include "rlab/numcore/ops.hpp"
#include "rlab/train/trainer.hpp"

using namespace rlab;
using train::Method;

namespace {

vit::ViTConfig small_config() {
  vit::ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.n_classes = 3;
  c.register_count = 4;
  return c;
}

const data::Dataset& small_domain() {
  static const data::Dataset ds = [] {
    data::DomainSpec s;
    s.name = "tr";
    s.class_count = 3;
    s.images_per_class = 16;
    s.image_size = 16;
    s.seed = 5;
    return data::generate_domain(s);
  }();
  return ds;
}

bool same_params(const vit::ViT& a, const vit::ViT& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].shape() != pb[i].shape() ||
        std::memcmp(pa[i].data().data(), pb[i].data().data(), pa[i].size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST(Method, NamesRoundTrip) {
  ASSERT_EQ(train::all_methods().size(), 10u);
  for (auto m : train::all_methods()) EXPECT_EQ(train::parse_method(train::to_string(m)), m);
  EXPECT_THROW(train::parse_method("dropout"), ConfigError);
  EXPECT_TRUE(train::is_perturbation(Method::weight_p));
  EXPECT_FALSE(train::is_perturbation(Method::reap));
  EXPECT_TRUE(train::uses_reap_knobs(Method::cluster_mask));
  EXPECT_FALSE(train::uses_reap_knobs(Method::random_registers));
}

TEST(Method, ModelGeometryFollowsMethod) {
  train::TrainConfig cfg;
  cfg.reap.extra_registers = 7;
  auto base = small_config();
  base.register_mode = vit::RegisterMode::learnable;
  EXPECT_EQ(train::model_config_for(Method::baseline, base, cfg).register_mode,
            vit::RegisterMode::none);
  EXPECT_EQ(train::model_config_for(Method::attn_p, base, cfg).register_mode,
            vit::RegisterMode::none);
  EXPECT_EQ(train::model_config_for(Method::random_registers, base, cfg).register_mode,
            vit::RegisterMode::random);
  const auto r = train::model_config_for(Method::reap, base, cfg);
  EXPECT_EQ(r.register_mode, vit::RegisterMode::random);
  EXPECT_EQ(r.register_count, 7u);
  EXPECT_EQ(r.register_depth, vit::RegisterDepth::shallow);
}

TEST(TrainConfig, Validation) {
  train::TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.perturb_sigma = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.reap.drop_ratio = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Training, ClassCountMismatchIsAConfigError) {
  auto c = small_config();
  c.n_classes = 4;
  EXPECT_THROW(train::train_source(small_domain(), Method::baseline, c, {}, 0), ConfigError);
}

TEST(Training, SourceEvaluationIsPlainCrossEntropy) {
  num::RngStream init(1, "init");
  const vit::ViT model(small_config(), init);
  const auto log = train::evaluate_source(model, small_domain(), 10);
  std::vector<std::size_t> all(small_domain().size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  num::NoGradGuard guard;
  const auto out = model.forward(model.patchify(small_domain().stack(all)));
  EXPECT_NEAR(log.loss, num::cross_entropy(out.logits, small_domain().labels(all)).item(), 1e-12);
  EXPECT_GE(log.accuracy, 0.0);
  EXPECT_LE(log.accuracy, 1.0);
}

TEST(Training, SameSeedSameRun) {
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  for (auto m : {Method::random_registers, Method::reap, Method::random_mask}) {
    const auto a = train::train_source(small_domain(), m, small_config(), cfg, 2);
    const auto b = train::train_source(small_domain(), m, small_config(), cfg, 2);
    ASSERT_EQ(a.log.size(), 2u);
    EXPECT_EQ(a.log[1].loss, b.log[1].loss);
    EXPECT_TRUE(same_params(a.model, b.model)) << train::to_string(m);
    const auto c = train::train_source(small_domain(), m, small_config(), cfg, 3);
    EXPECT_NE(a.log[1].loss, c.log[1].loss);
  }
}

TEST(Training, RandomBankLogsTau) {
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  auto base = small_config();
  base.tau_init = 0.3;
  const auto r = train::train_source(small_domain(), Method::random_registers, base, cfg, 1);
  EXPECT_NEAR(r.log[0].tau, 0.3, 1e-12);
  EXPECT_NE(r.log[1].tau, 0.3);
  EXPECT_EQ(train::train_source(small_domain(), Method::baseline, base, cfg, 1).log[1].tau, 0.0);
}

// Weight noise is applied for the forward and backward pass only: with zero
// learning rates the parameters come back bitwise unchanged.
TEST(Training, WeightNoiseIsRestoredAfterEachStep) {
  train::TrainConfig cfg;
  cfg.lr_backbone = 0.0;
  cfg.lr_head = 0.0;
  cfg.perturb_sigma = 0.5;
  num::RngStream init(4, "init");
  vit::ViT model(small_config(), init);
  const vit::ViT before = model.clone();
  train::Trainer t(model, Method::weight_p, cfg, 9);
  const std::vector<std::size_t> idx{0, 17, 33};
  const auto [noisy_loss, correct] = t.step(small_domain().stack(idx), small_domain().labels(idx));
  (void)correct;
  EXPECT_TRUE(same_params(model, before));
  num::NoGradGuard guard;
  const double clean = num::cross_entropy(
      model.forward(model.patchify(small_domain().stack(idx))).logits, small_domain().labels(idx)).item();
  EXPECT_NE(noisy_loss, clean);
}

TEST(Training, BaselineLossFallsBelowInitialLoss) {
  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.lr_backbone = 3e-3;
  cfg.lr_head = 3e-3;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto r = train::train_source(small_domain(), Method::baseline, small_config(), cfg, seed);
    ASSERT_EQ(r.log.size(), 5u);
    EXPECT_LT(r.log.back().loss, r.log.front().loss) << "seed " << seed;
    EXPECT_LT(train::evaluate_source(r.model, small_domain()).loss, r.log.front().loss);
  }
}
