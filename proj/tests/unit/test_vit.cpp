#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "../common/grad_cases.hpp"
#include "../common/oracles.hpp"
#include "rlab/errors.hpp"
#include "rlab/numcore/grad_check.hpp"
#include "rlab/numcore/ops.hpp"
#include "rlab/vit/attention.hpp"
#include "rlab/vit/config_json.hpp"
#include "rlab/vit/model.hpp"

using namespace rlab;
using num::Tensor;

namespace {

vit::ViTConfig tiny(vit::RegisterMode mode = vit::RegisterMode::none,
                    vit::RegisterDepth depth = vit::RegisterDepth::shallow) {
  vit::ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.n_classes = 3;
  c.register_mode = mode;
  c.register_depth = depth;
  c.register_count = 2;
  return c;
}

Tensor images(std::uint64_t seed, std::size_t b, std::size_t size) {
  num::RngStream r(seed, "img");
  std::vector<double> v(b * 3 * size * size);
  for (double& x : v) x = r.uniform();
  return Tensor({b, 3, size, size}, std::move(v));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(ViTConfig, ValidationRejectsBadGeometry) {
  vit::ViTConfig c;
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(vit::ViTConfig{}.validate());
}

TEST(ViTConfig, JsonRoundTripAndUnknownKeys) {
  vit::ViTConfig c = tiny(vit::RegisterMode::random, vit::RegisterDepth::deep);
  c.tau_init = 0.25;
  nlohmann::json j;
  vit::to_json(j, c);
  vit::ViTConfig back;
  vit::from_json(j, back);
  nlohmann::json j2;
  vit::to_json(j2, back);
  EXPECT_EQ(j, j2);
  j["dimm"] = 3;
  EXPECT_THROW(vit::from_json(j, back), ConfigError);
}

TEST(Patches, ExtractMatchesPixelOracle) {
  vit::ViTConfig c;
  const Tensor img = images(1, 2, 32);
  const Tensor p = vit::extract_patches(img, c);
  ASSERT_EQ(p.shape(), (num::Shape{2 * 16, 3 * 64}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const std::size_t patch = (y / 8) * 4 + x / 8;
          const std::size_t col = ch * 64 + (y % 8) * 8 + x % 8;
          ASSERT_EQ(p.at(b * 16 + patch, col), img.at(((b * 3 + ch) * 32 + y) * 32 + x));
        }
}

TEST(Patches, WrongImageSizeIsADimensionError) {
  vit::ViTConfig c;
  EXPECT_THROW(vit::extract_patches(images(1, 1, 16), c), DimensionError);
}

TEST(Attention, MatchesLoopOracle) {
  num::RngStream r(3, "mha");
  const std::size_t B = 2, L = 5, D = 6, H = 2;
  const Tensor qkv({B * L, 3 * D}, r.normals(B * L * 3 * D), true);
  vit::AttentionRecord rec;
  const Tensor out = vit::multi_head_attention(qkv, B, L, H, nullptr, &rec);
  const auto m = oracle::to_matrix(qkv);
  for (std::size_t b = 0; b < B; ++b) {
    const oracle::Matrix seq(m.begin() + b * L, m.begin() + (b + 1) * L);
    std::vector<std::size_t> all(L);
    for (std::size_t k = 0; k < L; ++k) all[k] = k;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < L; ++i) {
        const double den = oracle::partial_denominator(seq, D, H, h, i, all);
        for (std::size_t j = 0; j < L; ++j) {
          const double a = std::exp(oracle::dot_scaled(seq, D, H, h, i, j)) / den;
          EXPECT_NEAR(rec.at(b, h, i, j), a, 1e-12);
        }
        for (std::size_t c = 0; c < D / H; ++c) {
          double o = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            o += std::exp(oracle::dot_scaled(seq, D, H, h, i, j)) / den * seq[j][2 * D + h * 3 + c];
          }
          EXPECT_NEAR(out.at(b * L + i, h * 3 + c), o, 1e-12);
        }
      }
  }
}

TEST(Attention, GradientWithAndWithoutNoise) {
  num::RngStream r(4, "mha-grad");
  const std::size_t B = 2, L = 4, D = 4, H = 2;
  const Tensor probe({B * L, D}, r.normals(B * L * D));
  for (double sigma : {0.0, 0.3}) {
    auto f = [&](const Tensor& qkv) {
      num::RngStream noise_rng(9, "noise");
      vit::AttentionNoise noise{sigma, &noise_rng};
      return num::sum(num::mul(vit::multi_head_attention(qkv, B, L, H, &noise), probe));
    };
    const Tensor x({B * L, 3 * D}, r.normals(B * L * 3 * D), true);
    EXPECT_LT(num::grad_check(f, x), 1e-6) << "sigma " << sigma;
  }
}

TEST(Attention, NoiseIsAdditiveAndUnnormalised) {
  num::RngStream r(5, "mha-noise");
  const Tensor qkv({4, 12}, r.normals(48));
  vit::AttentionRecord clean, noisy;
  vit::multi_head_attention(qkv, 1, 4, 2, nullptr, &clean);
  num::RngStream noise_rng(1, "n");
  num::RngStream replay = noise_rng;
  vit::AttentionNoise noise{0.5, &noise_rng};
  vit::multi_head_attention(qkv, 1, 4, 2, &noise, &noisy);
  for (std::size_t i = 0; i < clean.attn.size(); ++i) {
    EXPECT_NEAR(noisy.attn.at(i), clean.attn.at(i) + 0.5 * replay.normal(), 1e-14);
  }
}

TEST(Tokens, ValidateRejectsMisplacedRoles) {
  num::RngStream init(1, "init");
  vit::ViT model(tiny(), init);
  vit::TokenSequence seq = model.patchify(images(1, 1, 8));
  EXPECT_NO_THROW(seq.validate());
  seq.roles[0] = vit::TokenRole::image;
  EXPECT_THROW(seq.validate(), DimensionError);
}

TEST(ViT, PatchifyPlacesClsAndPositions) {
  num::RngStream init(2, "init");
  vit::ViT model(tiny(), init);
  const Tensor img = images(2, 1, 8);
  const auto seq = model.patchify(img);
  ASSERT_EQ(seq.length, 5u);
  const auto named = model.named_parameters();
  auto find = [&](const std::string& n) {
    for (const auto& t : named)
      if (t.name == n) return t.tensor;
    throw std::runtime_error(n);
  };
  const Tensor cls = find("cls"), pos = find("pos"), w = find("patch_embed.weight"),
               b = find("patch_embed.bias");
  const auto patches = oracle::to_matrix(vit::extract_patches(img, model.config()));
  const auto emb = oracle::affine(patches, w, b);
  for (std::size_t d = 0; d < 8; ++d) {
    EXPECT_EQ(seq.tokens.at(0, d), cls.at(0, d));
    for (std::size_t p = 0; p < 4; ++p) {
      EXPECT_NEAR(seq.tokens.at(1 + p, d), emb[p][d] + pos.at(p, d), 1e-14);
    }
  }
}

// Full tiny-ViT cross-entropy against central differences, per register mode.
class TinyViTGrad : public ::testing::TestWithParam<int> {};

TEST_P(TinyViTGrad, LossGradientMatchesFiniteDifferences) {
  EXPECT_LT(gradcases::tiny_vit_error(GetParam()), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Modes, TinyViTGrad, ::testing::Range(0, 6));

TEST(ViT, SaveLoadRoundTripIsBitwise) {
  num::RngStream init(3, "init");
  vit::ViT model(tiny(vit::RegisterMode::learnable), init);
  const auto dir = std::filesystem::temp_directory_path() / "rlab_vit_test";
  std::filesystem::create_directories(dir);
  model.save(dir / "m.ckpt");
  EXPECT_TRUE(std::filesystem::exists(dir / "m.json"));
  const vit::ViT back = vit::ViT::load(dir / "m.ckpt");
  const Tensor img = images(4, 2, 8);
  EXPECT_TRUE(bitwise_equal(model.features(img), back.features(img)));
  const auto a = model.named_parameters(), b = back.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(a[i].tensor, b[i].tensor));
}

TEST(ViT, LoadParametersRejectsMismatch) {
  num::RngStream init(3, "init");
  vit::ViT model(tiny(), init);
  auto named = model.named_parameters();
  named.pop_back();
  EXPECT_THROW(model.load_parameters(named), IntegrityError);
  named = model.named_parameters();
  named[0].tensor = Tensor({1, 1});
  EXPECT_THROW(model.load_parameters(named), IntegrityError);
}

TEST(ViT, CloneSharesNoStorage) {
  num::RngStream init(3, "init");
  vit::ViT model(tiny(), init);
  vit::ViT copy = model.clone();
  auto p = copy.parameters();
  p[0].mutable_data()[0] += 1.0;
  EXPECT_NE(model.parameters()[0].at(0), copy.parameters()[0].at(0));
}

TEST(ViT, CaptureRecordsEveryBlock) {
  num::RngStream init(3, "init");
  vit::ViT model(tiny(), init);
  vit::ForwardOptions opt;
  opt.capture_attention = true;
  const auto out = model.forward(model.patchify(images(1, 3, 8)), opt);
  ASSERT_EQ(out.records.size(), 2u);
  for (const auto& rec : out.records) {
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i < 5; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < 5; ++j) row += rec.at(b, h, i, j);
          EXPECT_NEAR(row, 1.0, 1e-12);
        }
  }
}
