#include <benchmark/benchmark.h>

#include "vlif/net.hpp"
#include "vlif/ops.hpp"

using namespace vlif;

static void BM_derain_forward(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.base_channels = static_cast<int>(state.range(0));
  DerainNet net(cfg);
  Rng rng(1);
  Tensor img = rand_uniform({3, 32, 32}, rng, 0.1, 0.9);
  for (auto _ : state) {
    ForwardCtx ctx;
    benchmark::DoNotOptimize(net.forward(img, ctx));
  }
}
BENCHMARK(BM_derain_forward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_derain_train_iteration(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.base_channels = static_cast<int>(state.range(0));
  DerainNet net(cfg);
  Rng rng(1);
  Tensor img = rand_uniform({3, 32, 32}, rng, 0.1, 0.9);
  Tensor target = rand_uniform({1, 3, 32, 32}, rng, 0.1, 0.9);
  Adam opt(net.parameters(), 2e-3);
  for (auto _ : state) {
    opt.zero_grad();
    ForwardCtx ctx;
    ctx.training = true;
    backward(charbonnier(net.forward(img, ctx), target, 1e-3));
    opt.step();
  }
}
BENCHMARK(BM_derain_train_iteration)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
