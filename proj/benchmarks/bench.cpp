#include <benchmark/benchmark.h>

#include <random>

#include "cppap/autodiff.hpp"
#include "cppap/model.hpp"

using namespace cppap;

static void BM_Matmul(benchmark::State& state) {
  std::size_t n = std::size_t(state.range(0));
  std::mt19937_64 rng(1);
  Var a = ag::leaf(Tensor::uniform({n, n}, -1, 1, rng));
  Var b = ag::leaf(Tensor::uniform({n, n}, -1, 1, rng));
  for (auto _ : state) {
    Var c = ag::matmul(a, b);
    benchmark::DoNotOptimize(c->value.data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_Conv2dSame(benchmark::State& state) {
  std::size_t hw = std::size_t(state.range(0));
  std::mt19937_64 rng(1);
  Var x = ag::leaf(Tensor::uniform({2, hw, hw, 8}, -1, 1, rng));
  Var k = ag::leaf(Tensor::uniform({3, 3, 8, 8}, -1, 1, rng));
  Var bias = ag::leaf(Tensor::zeros({8}));
  for (auto _ : state) {
    Var y = ag::conv2d_same(x, k, bias);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(BM_Conv2dSame)->Arg(16)->Arg(32)->Arg(64);

static void BM_MiniForward(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::miniature();
  cfg.include_participant = true;
  cfg.include_visual = true;
  Model model(cfg, 7);
  std::mt19937_64 rng(2);
  Model::BatchInput in;
  in.soundscape = Tensor::uniform({4, cfg.audio_t, cfg.audio_f, cfg.audio_channels}, -1, 1, rng);
  in.masker = Tensor::uniform({4, cfg.audio_t, cfg.audio_f, cfg.masker_channels}, -1, 1, rng);
  in.gamma = Tensor::uniform({4}, -1, 0, rng);
  in.participant = Tensor::uniform({4, cfg.participant_dim}, 0, 1, rng);
  in.image = Tensor::uniform({4, cfg.image_h, cfg.image_w, cfg.image_channels}, 0, 1, rng);
  for (auto _ : state) {
    auto res = model.forward_batch(in, /*train=*/false, rng);
    benchmark::DoNotOptimize(res.mu->value.data());
  }
}
BENCHMARK(BM_MiniForward);

BENCHMARK_MAIN();
