#include <benchmark/benchmark.h>

#include <numeric>

#include "rlab/analysis/analysis.hpp"
#include "rlab/data/dataset.hpp"
#include "rlab/numcore/ops.hpp"
#include "rlab/numcore/rng.hpp"
#include "rlab/reap/reap.hpp"
#include "rlab/vit/attention.hpp"
#include "rlab/vit/model.hpp"

using namespace rlab;

namespace {

num::Tensor normals(num::Shape shape, std::uint64_t seed, bool grad = false) {
  num::RngStream r(seed, "bench");
  const auto n = num::numel(shape);
  return num::Tensor(std::move(shape), r.normals(n, 1.0), grad);
}

const data::Dataset& images() {
  static const data::Dataset ds = [] {
    data::DomainSpec s;
    s.class_count = 4;
    s.images_per_class = 16;
    return data::generate_domain(s);
  }();
  return ds;
}

num::Tensor batch(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return images().stack(idx);
}

vit::ViTConfig model_config(vit::RegisterMode mode) {
  vit::ViTConfig c;
  c.n_classes = 4;
  c.register_mode = mode;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = normals({n, n}, 1), b = normals({n, n}, 2);
  num::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(num::matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_Attention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t seqs = 8, dim = 64, heads = 4;
  const auto qkv = normals({seqs * len, 3 * dim}, 3);
  num::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(vit::multi_head_attention(qkv, seqs, len, heads));
}
BENCHMARK(BM_Attention)->Arg(17)->Arg(33)->Arg(49);

void BM_Forward(benchmark::State& state) {
  num::RngStream init(0, "init");
  const vit::ViT model(model_config(static_cast<vit::RegisterMode>(state.range(0))), init);
  const auto x = batch(32);
  num::NoGradGuard guard;
  for (auto _ : state) {
    num::RngStream rr(1, "registers");
    benchmark::DoNotOptimize(model.forward(model.patchify(x), model.source_options(&rr)).logits);
  }
}
BENCHMARK(BM_Forward)
    ->Arg(static_cast<int>(vit::RegisterMode::none))
    ->Arg(static_cast<int>(vit::RegisterMode::random))
    ->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  num::RngStream init(0, "init");
  const vit::ViT model(model_config(vit::RegisterMode::none), init);
  const auto x = batch(32);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  const auto labels = images().labels(idx);
  for (auto _ : state) {
    const auto loss = num::cross_entropy(model.forward(model.patchify(x)).logits, labels);
    loss.backward();
    for (auto p : model.parameters()) p.zero_grad();
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_ReapPlan(benchmark::State& state) {
  const auto& img = images().records[0].image;
  reap::ReapConfig cfg;
  cfg.anchor_ratio = 0.5;
  num::RngStream rng(0, "reap");
  for (auto _ : state) benchmark::DoNotOptimize(reap::plan_image(img, 8, cfg, rng));
}
BENCHMARK(BM_ReapPlan);

void BM_Cka(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = normals({n, 64}, 4), y = normals({n, 64}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(analysis::cka(x, y));
}
BENCHMARK(BM_Cka)->Arg(50)->Arg(100)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
