#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "vlif/ops.hpp"
#include "vlif/vlif.hpp"

using namespace vlif;
using vlif::test::gradcheck;
using vlif::test::random_tensor;

namespace {

VlifConfig vcfg(int r = 2, PatchOrder order = PatchOrder::row_major) {
  VlifConfig c;
  c.r = r;
  c.patch_order = order;
  c.neuron.theta = 1.0;
  c.neuron.beta = 0.5;
  c.neuron.d_max = 4;
  return c;
}

}  // namespace

TEST_CASE("patch_to_time: r=1 is the identity") {
  Rng rng(3);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor y = patch_to_time(x, vcfg(1));
  CHECK(y.shape() == x.shape());
  CHECK(y.data() == x.data());
}

TEST_CASE("patch_to_time: row-major 2x2 patch becomes the sequence (1,2,3,4)") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = patch_to_time(x, vcfg(2));
  CHECK(y.shape() == Shape{4, 1, 1, 1});
  CHECK(y.data() == std::vector<double>{1, 2, 3, 4});

  Tensor yc = patch_to_time(x, vcfg(2, PatchOrder::column_major));
  CHECK(yc.data() == std::vector<double>{1, 3, 2, 4});
}

TEST_CASE("patch_to_time: indivisible extents raise a dimension error") {
  Tensor x = Tensor::zeros({1, 1, 3, 4});
  CHECK_THROWS_AS(patch_to_time(x, vcfg(2)), DimensionError);
  Tensor y = Tensor::zeros({3, 1, 2, 2});
  CHECK_THROWS_AS(time_to_patch(y, vcfg(2)), DimensionError);
}

TEST_CASE("patch_to_time/time_to_patch: exact bijection on random shapes") {
  Rng rng(7);
  const int64_t ts[] = {1, 2, 3};
  const int64_t cs[] = {1, 2, 5};
  const int rs[] = {1, 2, 3};
  for (int64_t t : ts)
    for (int64_t c : cs)
      for (int r : rs)
        for (PatchOrder order : {PatchOrder::row_major, PatchOrder::column_major}) {
          VlifConfig cfgv = vcfg(r, order);
          const int64_t h = r * (1 + static_cast<int64_t>(rng.next_below(3)));
          const int64_t w = r * (1 + static_cast<int64_t>(rng.next_below(3)));
          Tensor x = random_tensor({t, c, h, w}, rng);
          Tensor pt = patch_to_time(x, cfgv);
          CHECK(pt.shape() == Shape{t * r * r, c, h / r, w / r});
          Tensor back = time_to_patch(pt, cfgv);
          CHECK(back.data() == x.data());
          // Every value appears exactly once.
          auto sorted_in = x.data(), sorted_out = pt.data();
          std::sort(sorted_in.begin(), sorted_in.end());
          std::sort(sorted_out.begin(), sorted_out.end());
          CHECK(sorted_in == sorted_out);
          // Double round trip is idempotent.
          CHECK(time_to_patch(patch_to_time(back, cfgv), cfgv).data() == x.data());
        }
}

TEST_CASE("patch_to_time: gradient is the inverse permutation") {
  Rng rng(11);
  Tensor x = random_tensor({2, 2, 4, 4}, rng);
  auto res = gradcheck(
      [](const std::vector<Tensor>& in) { return patch_to_time(in[0], vcfg(2)); }, {x});
  CHECK(res.max_rel_err <= 1e-7);
}

TEST_CASE("vlif_integrate: zero input gives zero spikes and zero F") {
  Tensor x = Tensor::zeros({1, 1, 4, 4});
  auto r = vlif_integrate(patch_to_time(x, vcfg(2)), vcfg(2));
  for (double v : r.spikes.data()) CHECK(v == 0.0);
  for (double v : r.f_map.data()) CHECK(v == 0.0);
}

TEST_CASE("vlif_integrate: carried membrane fires sub-threshold pixels in context") {
  // Uniform 0.6 patch, beta=1, D=1. A fresh single-step binary LIF at theta=1
  // never fires on 0.6. The quantized scan S=clip(round(U),0,1) evolves
  //   U: 0.6 -> fire, H=-0.4; 0.2 -> silent; 0.8 -> fire, H=-0.2; 0.4 -> silent
  // so context turns on two of the four pseudo-steps.
  VlifConfig c = vcfg(2);
  c.neuron.beta = 1.0;
  c.neuron.d_max = 1;
  Tensor x = Tensor::full({1, 1, 2, 2}, 0.6);

  auto lif = lif_step(x, NeuronState::zeros(x.shape()), c.neuron);
  for (double v : lif.spikes.data()) CHECK(v == 0.0);

  auto r = vlif_integrate(patch_to_time(x, c), c);
  CHECK(r.spikes.data() == std::vector<double>{1.0, 0.0, 1.0, 0.0});
  CHECK(nonzero_fraction(r.spikes) > nonzero_fraction(lif.spikes));
}

TEST_CASE("vlif_integrate: F map equals the direct summation oracle") {
  Rng rng(13);
  VlifConfig c = vcfg(2);
  Tensor x = random_tensor({2, 1, 4, 4}, rng, -0.5, 2.0);
  Tensor pt = patch_to_time(x, c);
  auto r = vlif_integrate(pt, c);

  const auto& d = pt.data();
  const int64_t steps = pt.size(0), chunk = pt.numel() / steps;
  for (int64_t pos = 0; pos < chunk; ++pos) {
    double hstate = 0.0, f = 0.0;
    for (int64_t t = 0; t < steps; ++t) {
      const double u = hstate + d[static_cast<size_t>(t * chunk + pos)];
      f += u;
      double q = std::min(std::max(std::round(u), 0.0), 4.0);
      hstate = 0.5 * (u - q);
    }
    CHECK(r.f_map.data()[static_cast<size_t>(pos)] == doctest::Approx(f).epsilon(1e-14));
  }
}

TEST_CASE("vlif energy bookkeeping: spike mass equals re-simulated crossings") {
  Rng rng(17);
  VlifConfig c = vcfg(2);
  Tensor x = random_tensor({1, 1, 8, 8}, rng, -0.5, 3.0);
  Tensor pt = patch_to_time(x, c);
  auto r = vlif_integrate(pt, c);
  double spike_mass = 0.0;
  for (double v : r.spikes.data()) spike_mass += v * c.neuron.d_max;

  const auto& d = pt.data();
  const int64_t steps = pt.size(0), chunk = pt.numel() / steps;
  double crossings = 0.0;
  for (int64_t pos = 0; pos < chunk; ++pos) {
    double hstate = 0.0;
    for (int64_t t = 0; t < steps; ++t) {
      const double u = hstate + d[static_cast<size_t>(t * chunk + pos)];
      const double q = std::min(std::max(std::round(u), 0.0), 4.0);
      crossings += q;
      hstate = 0.5 * (u - q);
    }
  }
  CHECK(spike_mass == doctest::Approx(crossings).epsilon(1e-12));
}

TEST_CASE("vlif spikes stay inside [0,1]") {
  Rng rng(19);
  VlifConfig c = vcfg(2);
  Tensor x = random_tensor({2, 2, 6, 6}, rng, -4.0, 9.0);
  auto r = vlif_integrate(patch_to_time(x, c), c);
  for (double v : r.spikes.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("temporal_attention: zero-initialized gate halves the input") {
  Rng rng(23);
  Tensor s = random_tensor({8, 2, 3, 3}, rng, 0.0, 1.0);
  TemporalAttentionParams p;
  p.w1 = Tensor::zeros({2, 8});
  p.b1 = Tensor::zeros({2});
  p.w2 = Tensor::zeros({8, 2});
  p.b2 = Tensor::zeros({8});
  Tensor out = temporal_attention(s, p);
  for (size_t i = 0; i < out.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(0.5 * s.data()[i]).epsilon(1e-12));
}

TEST_CASE("temporal_attention: bounded by the input for non-negative spikes") {
  Rng rng(29);
  Tensor s = random_tensor({4, 2, 4, 4}, rng, 0.0, 1.0);
  TemporalAttentionParams p = TemporalAttentionParams::init(4, rng);
  Tensor out = temporal_attention(s, p);
  double peak = 0.0;
  for (double v : s.data()) peak = std::max(peak, v);
  for (double v : out.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= peak);
  }
}

TEST_CASE("temporal_attention: gradient") {
  Rng rng(31);
  Tensor s = random_tensor({4, 2, 3, 3}, rng, -1.0, 1.0);
  TemporalAttentionParams p = TemporalAttentionParams::init(4, rng);
  auto res = gradcheck(
      [&](const std::vector<Tensor>& in) {
        TemporalAttentionParams q;
        q.w1 = in[1];
        q.b1 = in[2];
        q.w2 = in[3];
        q.b2 = in[4];
        return temporal_attention(in[0], q);
      },
      {s, p.w1, p.b1, p.w2, p.b2});
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("vlif_compress_t: averaging and selector kernels") {
  Rng rng(37);
  Tensor s = random_tensor({4, 2, 3, 3}, rng);
  CompressTParams avg = CompressTParams::averaging(1, 2);
  Tensor m = vlif_compress_t(s, 2, avg);
  CHECK(m.shape() == Shape{1, 2, 3, 3});
  for (int64_t i = 0; i < 18; ++i) {
    const double expect = (s.data()[i] + s.data()[18 + i] + s.data()[36 + i] + s.data()[54 + i]) / 4.0;
    CHECK(m.data()[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
  }

  CompressTParams sel;
  sel.w = Tensor::from_data({1, 4}, {1, 0, 0, 0});
  Tensor first = vlif_compress_t(s, 2, sel);
  for (int64_t i = 0; i < 18; ++i) CHECK(first.data()[static_cast<size_t>(i)] == s.data()[static_cast<size_t>(i)]);
}

TEST_CASE("vlif_compress_t: shape contract and gradient") {
  Rng rng(41);
  Tensor s = random_tensor({16, 3, 8, 8}, rng);
  CompressTParams p = CompressTParams::averaging(4, 2);
  CHECK(vlif_compress_t(s, 2, p).shape() == Shape{4, 3, 8, 8});

  Tensor small = random_tensor({8, 2, 2, 2}, rng);
  CompressTParams q = CompressTParams::averaging(2, 2);
  auto res = gradcheck(
      [](const std::vector<Tensor>& in) {
        CompressTParams pp;
        pp.w = in[1];
        return vlif_compress_t(in[0], 2, pp);
      },
      {small, q.w});
  CHECK(res.max_rel_err <= 1e-6);

  CHECK_THROWS_AS(vlif_compress_t(random_tensor({6, 1, 2, 2}, rng), 2, q), DimensionError);
}

TEST_CASE("vlif_compress_c: selector init picks the first pseudo-step") {
  Rng rng(43);
  Tensor s = random_tensor({4, 2, 3, 3}, rng, 0.0, 1.0);  // non-negative like spikes
  const int64_t c = 2, r2 = 4;
  CompressCParams p;
  p.w1 = Tensor::zeros({c, r2 * c, 1, 1});
  // Hidden unit ch copies folded channel ch (pseudo-step 0 block).
  for (int64_t ch = 0; ch < c; ++ch) p.w1.mut_data()[static_cast<size_t>(ch * r2 * c + ch)] = 1.0;
  p.b1 = Tensor::zeros({c});
  p.w2 = Tensor::zeros({c, c, 1, 1});
  for (int64_t ch = 0; ch < c; ++ch) p.w2.mut_data()[static_cast<size_t>(ch * c + ch)] = 1.0;
  p.b2 = Tensor::zeros({c});
  Tensor out = vlif_compress_c(s, 2, p);
  CHECK(out.shape() == Shape{1, 2, 3, 3});
  for (int64_t i = 0; i < 18; ++i) CHECK(out.data()[static_cast<size_t>(i)] == s.data()[static_cast<size_t>(i)]);
}

TEST_CASE("vlif_compress_c: shape contract and gradient") {
  Rng rng(47);
  Tensor s = random_tensor({8, 2, 4, 4}, rng);
  CompressCParams p = CompressCParams::init(2, 2, rng);
  CHECK(vlif_compress_c(s, 2, p).shape() == Shape{2, 2, 4, 4});

  auto res = gradcheck(
      [](const std::vector<Tensor>& in) {
        CompressCParams pp;
        pp.w1 = in[1];
        pp.b1 = in[2];
        pp.w2 = in[3];
        pp.b2 = in[4];
        return vlif_compress_c(in[0], 2, pp);
      },
      {s, p.w1, p.b1, p.w2, p.b2});
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("vlif cell: zero input propagates to zero output on both heads") {
  Rng rng(53);
  for (Compression comp : {Compression::temporal, Compression::channel}) {
    VlifConfig c = vcfg(2);
    c.compression = comp;
    VlifCell cell(c, 2, 3, rng);
    Tensor out = cell.forward(Tensor::zeros({2, 3, 8, 8}));
    for (double v : out.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("vlif cell: temporal head downsamples, channel head keeps channels") {
  Rng rng(59);
  VlifConfig ct = vcfg(2);
  ct.compression = Compression::temporal;
  VlifCell cell_t(ct, 4, 3, rng);
  Tensor x = random_tensor({4, 3, 8, 8}, rng, 0.0, 1.5);
  CHECK(cell_t.forward(x).shape() == Shape{4, 3, 4, 4});

  VlifConfig cc = vcfg(2);
  cc.compression = Compression::channel;
  VlifCell cell_c(cc, 4, 3, rng);
  CHECK(cell_c.forward(x).shape() == Shape{4, 3, 4, 4});
}

TEST_CASE("vlif cell: relaxed forward matches finite differences") {
  Rng rng(61);
  VlifConfig c = vcfg(2);
  c.compression = Compression::channel;
  VlifCell cell(c, 2, 2, rng);
  Tensor x = random_tensor({2, 2, 4, 4}, rng, -1.0, 2.0);
  auto res = gradcheck(
      [&](const std::vector<Tensor>& in) { return cell.forward(in[0], SpikeMode::relaxed); }, {x});
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("vlif cell: counter records neuron, attention and compression") {
  Rng rng(67);
  VlifConfig c = vcfg(2);
  c.compression = Compression::temporal;
  VlifCell cell(c, 2, 2, rng);
  OpCounter counter;
  cell.forward(rand_uniform({2, 2, 4, 4}, rng, 0.0, 2.0), SpikeMode::spiking, &counter, "probe");
  REQUIRE(counter.layers.size() == 3);
  CHECK(counter.layers[0].layer == "probe.neuron");
  CHECK(counter.layers[0].sign_ops == 64.0);  // 8 pseudo-steps x 2ch x 2 x 2
  CHECK(counter.layers[2].spike_driven);
}
