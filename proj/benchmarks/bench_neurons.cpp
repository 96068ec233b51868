#include <benchmark/benchmark.h>

#include "vlif/ops.hpp"
#include "vlif/vlif.hpp"

using namespace vlif;

namespace {
NeuronConfig cfg() {
  NeuronConfig c;
  c.theta = 1.0;
  c.beta = 0.5;
  c.d_max = 4;
  return c;
}
}  // namespace

static void BM_neuron_scan(benchmark::State& state) {
  Rng rng(1);
  const int64_t steps = state.range(0);
  Tensor x = rand_uniform({steps, 16, 16, 16}, rng, -0.5, 2.0);
  for (auto _ : state)
    benchmark::DoNotOptimize(neuron_scan(x, cfg(), NeuronVariant::nilif).spikes);
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_neuron_scan)->Arg(4)->Arg(16);

static void BM_neuron_scan_backward(benchmark::State& state) {
  Rng rng(1);
  Tensor x = rand_uniform({16, 16, 16, 16}, rng, -0.5, 2.0).set_requires_grad(true);
  for (auto _ : state) {
    x.zero_grad();
    backward(mean(neuron_scan(x, cfg(), NeuronVariant::nilif).spikes));
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_neuron_scan_backward);

static void BM_patch_to_time(benchmark::State& state) {
  Rng rng(1);
  VlifConfig vc;
  vc.r = 2;
  vc.neuron = cfg();
  Tensor x = rand_uniform({4, 16, 64, 64}, rng, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(patch_to_time(x, vc));
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_patch_to_time);

static void BM_vlif_cell_forward(benchmark::State& state) {
  Rng rng(1);
  VlifConfig vc;
  vc.r = 2;
  vc.neuron = cfg();
  vc.compression = state.range(0) ? Compression::channel : Compression::temporal;
  VlifCell cell(vc, 4, 16, rng);
  Tensor x = rand_uniform({4, 16, 32, 32}, rng, 0.0, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(cell.forward(x));
}
BENCHMARK(BM_vlif_cell_forward)->Arg(0)->Arg(1);
