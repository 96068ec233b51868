#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "testutil.hpp"
#include "vlif/config.hpp"
#include "vlif/net.hpp"
#include "vlif/ops.hpp"

using namespace vlif;
using vlif::test::random_tensor;

namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_cfg(uint64_t seed = 7) {
  NetworkConfig cfg;
  cfg.timesteps = 2;
  cfg.base_channels = 8;
  cfg.scales = 3;
  cfg.channel_multipliers = {1, 2, 2};
  cfg.refine_blocks = 1;
  cfg.seed = seed;
  return cfg;
}

Tensor random_image_tensor(int64_t h, int64_t w, Rng& rng) {
  return rand_uniform({3, h, w}, rng, 0.05, 0.95);
}

std::vector<ImagePair> synthetic_pairs(int count, int64_t size, uint64_t seed) {
  Rng rng(seed);
  std::vector<ImagePair> pairs;
  for (int i = 0; i < count; ++i) {
    Image clean = make_clean_image(size, size, rng);
    RainSpec spec;
    spec.streak_count = 6;
    spec.length_px = static_cast<double>(size) / 2.0;
    spec.intensity = 0.55;
    spec.seed = seed * 1000 + static_cast<uint64_t>(i);
    pairs.push_back(gen_rain(clean, spec, "p" + std::to_string(i)));
  }
  return pairs;
}

std::string fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("vlif_nettest_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("network config validation") {
  NetworkConfig cfg = tiny_cfg();
  cfg.validate();
  CHECK(cfg.min_divisor() == 8);
  CHECK_THROWS_AS(cfg.validate_input(20, 32), ValueError);
  cfg.scales = 1;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = tiny_cfg();
  cfg.channel_multipliers = {1, 2};
  CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("encode_input: direct coding replicates frames before the embedding") {
  DerainNet net(tiny_cfg());
  Rng rng(3);
  Tensor img = random_image_tensor(16, 16, rng);
  ForwardCtx ctx;
  Tensor enc = net.encode_input(img, ctx);
  CHECK(enc.shape() == Shape{2, 8, 16, 16});
  // Zero-initialized T-EMB: timesteps are identical copies.
  const auto& d = enc.data();
  const int64_t chunk = enc.numel() / 2;
  for (int64_t i = 0; i < chunk; ++i)
    CHECK(d[static_cast<size_t>(i)] == d[static_cast<size_t>(chunk + i)]);

  NetworkConfig one = tiny_cfg();
  one.timesteps = 1;
  DerainNet net1(one);
  CHECK(net1.encode_input(img, ctx).shape() == Shape{1, 8, 16, 16});

  Tensor bad = Tensor::full({3, 16, 16}, 1.5);
  CHECK_THROWS_AS(net.encode_input(bad, ctx), ValueError);
}

TEST_CASE("forward: identity at initialization, bit-exact") {
  DerainNet net(tiny_cfg());
  Rng rng(5);
  Tensor img = random_image_tensor(16, 16, rng);
  ForwardCtx ctx;
  Tensor out = net.forward(img, ctx);
  CHECK(out.shape() == Shape{1, 3, 16, 16});
  CHECK(out.data() == img.data());
}

TEST_CASE("forward: output always inside [0,1] and residual additivity") {
  NetworkConfig cfg = tiny_cfg(11);
  DerainNet net(cfg);
  // Randomize the head so the residual is nonzero.
  Rng prng(13);
  for (Parameter& p : net.parameters())
    if (p.name == "head.k" || p.name == "head.b")
      for (double& v : p.tensor.mut_data()) v = prng.uniform(-0.3, 0.3);
  Rng rng(17);
  Tensor img = random_image_tensor(16, 16, rng);
  ForwardCtx ctx;
  Tensor out = net.forward(img, ctx);
  for (double v : out.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const Tensor& residual = net.last_residual();
  REQUIRE(residual.numel() == out.numel());
  int64_t interior = 0;
  for (size_t i = 0; i < out.data().size(); ++i) {
    const double reconstructed = out.data()[i] + residual.data()[i];
    if (out.data()[i] > 0.0 && out.data()[i] < 1.0) {
      CHECK(reconstructed == doctest::Approx(img.data()[i]).epsilon(1e-12));
      ++interior;
    }
  }
  CHECK(interior > 0);
}

TEST_CASE("forward+backward populates every parameter gradient") {
  DerainNet net(tiny_cfg(19));
  Rng rng(23);
  Tensor img = random_image_tensor(16, 16, rng);
  Tensor target = reshape(random_image_tensor(16, 16, rng), {1, 3, 16, 16});
  ForwardCtx ctx;
  ctx.training = true;
  Tensor loss = charbonnier(net.forward(img, ctx), target, 1e-3);
  backward(loss);
  for (const Parameter& p : net.parameters()) {
    INFO("parameter ", p.name);
    CHECK(p.tensor.has_grad());
  }
}

TEST_CASE("forward: non-default scale counts keep the identity contract") {
  Rng rng(97);
  for (int scales : {2, 4}) {
    NetworkConfig cfg;
    cfg.timesteps = 2;
    cfg.base_channels = 4;
    cfg.scales = scales;
    cfg.channel_multipliers.assign(static_cast<size_t>(scales), 1);
    for (int s = 1; s < scales; ++s) cfg.channel_multipliers[static_cast<size_t>(s)] = 2;
    cfg.refine_blocks = 1;
    cfg.seed = 100 + static_cast<uint64_t>(scales);
    DerainNet net(cfg);
    const int64_t side = cfg.min_divisor() * 2;
    Tensor img = rand_uniform({3, side, side}, rng, 0.1, 0.9);
    ForwardCtx ctx;
    Tensor out = net.forward(img, ctx);
    CHECK(out.shape() == Shape{1, 3, side, side});
    CHECK(out.data() == img.data());
  }
}

TEST_CASE("parameters: unique names, shared storage with the net") {
  DerainNet net(tiny_cfg());
  auto params = net.parameters();
  CHECK(params.size() > 50);
  auto state = net.state();
  CHECK(state.size() > params.size());  // BN buffers included
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(1.0, 0, 100) == doctest::Approx(1.0));
  CHECK(cosine_lr(1.0, 50, 100) == doctest::Approx(0.5));
  CHECK(cosine_lr(1.0, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip restores bit-identical behavior") {
  NetworkConfig cfg = tiny_cfg(29);
  DerainNet net(cfg);
  Rng rng(31);
  // Push the net off the identity first.
  auto pairs = synthetic_pairs(4, 16, 33);
  TrainConfig tc;
  tc.iterations = 10;
  tc.patch_size = 16;
  tc.log_interval = 5;
  const std::string dir = fresh_dir("ckpt");
  train_derain(net, pairs, tc, dir, 37);

  Tensor img = random_image_tensor(16, 16, rng);
  ForwardCtx ctx;
  Tensor out1 = net.forward(img, ctx);

  RunConfig rc;
  rc.network = cfg;
  Checkpoint ck = make_checkpoint(net, network_manifest_json(rc));
  const std::string path = dir + "/roundtrip.ckpt";
  save_checkpoint(path, ck);
  Checkpoint loaded = load_checkpoint(path);

  RunConfig rc2;
  load_network_manifest(loaded.manifest_json, rc2);
  DerainNet net2(rc2.network);
  net2.load_state(loaded);
  ForwardCtx ctx2;
  Tensor out2 = net2.forward(img, ctx2);
  CHECK(out1.data() == out2.data());

  // Strictness: unknown tensor names are rejected.
  Checkpoint extra = loaded;
  extra.tensors.emplace_back("ghost", Tensor::zeros({1}));
  DerainNet net3(rc2.network);
  CHECK_THROWS_AS(net3.load_state(extra), ValueError);
}

TEST_CASE("training: 200 iterations on 20 synthetic 16x16 pairs descends") {
  NetworkConfig cfg = tiny_cfg(41);
  DerainNet net(cfg);
  auto pairs = synthetic_pairs(20, 16, 43);
  TrainConfig tc;
  tc.iterations = 200;
  tc.patch_size = 16;
  tc.log_interval = 20;
  tc.learning_rate = 2e-3;
  TrainResult res = train_derain(net, pairs, tc, fresh_dir("smoke"), 47);
  REQUIRE(res.log.size() >= 2);
  const double first = res.log.front().loss;
  const double last = res.log.back().loss;
  CHECK(last < first);
  CHECK(fs::exists(res.best_checkpoint));
  CHECK(fs::exists(res.last_checkpoint));
}

TEST_CASE("training: fixed seed gives a bit-identical loss trajectory") {
  auto run = [] {
    DerainNet net(tiny_cfg(53));
    auto pairs = synthetic_pairs(6, 16, 55);
    TrainConfig tc;
    tc.iterations = 30;
    tc.patch_size = 16;
    tc.log_interval = 5;
    return train_derain(net, pairs, tc, fresh_dir("det"), 59);
  };
  TrainResult a = run();
  TrainResult b = run();
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].psnr_db == b.log[i].psnr_db);
  }
}

TEST_CASE("training: non-finite loss aborts with a diagnostic dump") {
  DerainNet net(tiny_cfg(61));
  for (Parameter& p : net.parameters())
    if (p.name == "stem.k")
      p.tensor.mut_data()[0] = std::numeric_limits<double>::quiet_NaN();
  auto pairs = synthetic_pairs(2, 16, 63);
  TrainConfig tc;
  tc.iterations = 3;
  tc.patch_size = 16;
  const std::string dir = fresh_dir("nanabort");
  CHECK_THROWS_AS(train_derain(net, pairs, tc, dir, 65), std::runtime_error);
  CHECK(fs::exists(fs::path(dir) / "nonfinite_rainy.spkt"));
  CHECK(fs::exists(fs::path(dir) / "nonfinite_clean.spkt"));
}

TEST_CASE("training: empty dataset and bad config fail fast") {
  DerainNet net(tiny_cfg());
  TrainConfig tc;
  CHECK_THROWS_AS(train_derain(net, {}, tc, fresh_dir("empty"), 1), ValueError);
  tc.learning_rate = -1.0;
  CHECK_THROWS_AS(tc.validate(), ValueError);
  tc = TrainConfig();
  tc.lr_schedule = "step";
  CHECK_THROWS_AS(tc.validate(), ValueError);
}

TEST_CASE("ablation hook: swapping the patch-time neuron changes the output") {
  NetworkConfig cfg = tiny_cfg(67);
  DerainNet net(cfg);
  auto pairs = synthetic_pairs(4, 16, 69);
  TrainConfig tc;
  tc.iterations = 15;
  tc.patch_size = 16;
  train_derain(net, pairs, tc, fresh_dir("ablate"), 71);

  Rng rng(73);
  Tensor img = random_image_tensor(16, 16, rng);
  ForwardCtx ctx;
  Tensor quantized = net.forward(img, ctx);
  net.set_vlif_variant(NeuronVariant::lif);
  ForwardCtx ctx2;
  Tensor binary = net.forward(img, ctx2);
  CHECK(quantized.data() != binary.data());
}

TEST_CASE("profile_energy: counted layers cover the whole net") {
  DerainNet net(tiny_cfg(79));
  Rng rng(81);
  Tensor img = random_image_tensor(16, 16, rng);
  EnergyReport rep = profile_energy(net, img);
  CHECK(!rep.empty);
  CHECK(rep.total_pj > 0.0);
  bool has_stem = false, has_head = false, has_spike = false;
  for (const EnergyLayer& l : rep.layers) {
    if (l.count.layer == "stem") has_stem = true;
    if (l.count.layer == "head") has_head = true;
    if (l.count.spike_driven && l.count.mac_count > 0) has_spike = true;
  }
  CHECK(has_stem);
  CHECK(has_head);
  CHECK(has_spike);
}

TEST_CASE("capacity: a single pair overfits past 35 dB") {
  NetworkConfig cfg = tiny_cfg(83);
  cfg.base_channels = 8;
  DerainNet net(cfg);
  auto pairs = synthetic_pairs(1, 16, 85);
  TrainConfig tc;
  tc.patch_size = 16;
  tc.learning_rate = 4e-3;
  tc.log_interval = 100;
  const std::string dir = fresh_dir("overfit");
  double best = -1.0;
  // Up to 2000 iterations in 400-step slabs, stopping once the bar is met.
  for (int round = 0; round < 5 && best < 35.0; ++round) {
    tc.iterations = 400;
    train_derain(net, pairs, tc, dir, 87);
    ForwardCtx ctx;
    Tensor out = net.forward(image_to_tensor(pairs[0].rainy), ctx);
    best = std::max(best, psnr(tensor_to_image(out), pairs[0].clean));
  }
  CHECK(best > 35.0);
}
