#include <benchmark/benchmark.h>

#include "vlif/ops.hpp"
#include "vlif/rng.hpp"

using namespace vlif;

static void BM_conv2d_forward(benchmark::State& state) {
  const int64_t c = state.range(0), hw = state.range(1);
  Rng rng(1);
  Tensor x = rand_uniform({4, c, hw, hw}, rng, -1.0, 1.0);
  Tensor k = kaiming({c, c, 3, 3}, rng, c * 9);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 1, 1));
  state.SetItemsProcessed(state.iterations() * conv2d_macs(x.shape(), k.shape(), 1, 1));
}
BENCHMARK(BM_conv2d_forward)->Args({16, 32})->Args({32, 16})->Args({64, 8});

static void BM_conv2d_train_step(benchmark::State& state) {
  const int64_t c = state.range(0), hw = state.range(1);
  Rng rng(1);
  Tensor x = rand_uniform({4, c, hw, hw}, rng, -1.0, 1.0);
  Tensor k = kaiming({c, c, 3, 3}, rng, c * 9).set_requires_grad(true);
  for (auto _ : state) {
    k.zero_grad();
    backward(mean(conv2d(x, k, 1, 1)));
  }
  state.SetItemsProcessed(state.iterations() * 3 * conv2d_macs(x.shape(), k.shape(), 1, 1));
}
BENCHMARK(BM_conv2d_train_step)->Args({16, 32})->Args({32, 16});

static void BM_bilinear_resize(benchmark::State& state) {
  Rng rng(1);
  Tensor x = rand_uniform({4, 16, 32, 32}, rng, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(bilinear_resize(x, 64, 64));
}
BENCHMARK(BM_bilinear_resize);

static void BM_batch_norm_training(benchmark::State& state) {
  Rng rng(1);
  Tensor x = rand_uniform({4, 16, 32, 32}, rng, -1.0, 1.0);
  Tensor g = Tensor::full({16}, 1.0), b = Tensor::zeros({16});
  Tensor rm = Tensor::zeros({16}), rv = Tensor::full({16}, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(batch_norm(x, g, b, rm, rv, true));
}
BENCHMARK(BM_batch_norm_training);
