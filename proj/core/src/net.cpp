#include "vlif/net.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "vlif/ops.hpp"

namespace fs = std::filesystem;

namespace vlif {

void NetworkConfig::validate() const {
  if (timesteps < 1) throw ValueError("network: timesteps must be >= 1");
  if (base_channels < 1) throw ValueError("network: base_channels must be >= 1");
  if (scales < 2) throw ValueError("network: scales must be >= 2");
  if (static_cast<int>(channel_multipliers.size()) != scales)
    throw ValueError("network: one channel multiplier per scale required");
  for (int m : channel_multipliers)
    if (m < 1) throw ValueError("network: channel multipliers must be >= 1");
  if (r < 1) throw ValueError("network: r must be >= 1");
  if (refine_blocks < 0) throw ValueError("network: refine_blocks must be >= 0");
  neuron.validate();
}

int64_t NetworkConfig::min_divisor() const {
  return (static_cast<int64_t>(1) << (scales - 1)) * r;
}

void NetworkConfig::validate_input(int64_t h, int64_t w) const {
  const int64_t d = min_divisor();
  if (h % d != 0 || w % d != 0)
    throw ValueError("network: input " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by " + std::to_string(d));
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ValueError("train: iterations must be >= 1");
  if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValueError("train: learning_rate must be positive");
  if (patch_size < 1) throw ValueError("train: patch_size must be >= 1");
  if (!(charbonnier_eps > 0.0)) throw ValueError("train: charbonnier_eps must be positive");
  if (lr_schedule != "cosine" && lr_schedule != "constant")
    throw ValueError("train: unknown lr_schedule '" + lr_schedule + "'");
  if (loss != "charbonnier") throw ValueError("train: unknown loss '" + loss + "'");
  if (log_interval < 1) throw ValueError("train: log_interval must be >= 1");
}

DerainNet::DerainNet(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const int64_t t = cfg_.timesteps;
  chans_.clear();
  for (int s = 0; s < cfg_.scales; ++s)
    chans_.push_back(static_cast<int64_t>(cfg_.base_channels) * cfg_.channel_multipliers[s]);

  VlifConfig vc;
  vc.r = cfg_.r;
  vc.neuron = cfg_.neuron;
  vc.patch_order = cfg_.patch_order;
  vc.variant = cfg_.vlif_variant;

  stem_k_ = kaiming({chans_[0], 3, 3, 3}, rng, 27);
  stem_b_ = Tensor::zeros({chans_[0]});
  temb_ = Tensor::zeros({t, chans_[0]});

  enc_smu_ = SmuParams::init(t, chans_[0], cfg_.neuron, vc, rng);
  for (int s = 1; s < cfg_.scales; ++s) {
    down_k_.push_back(kaiming({chans_[s], chans_[s - 1], 3, 3}, rng, chans_[s - 1] * 9));
    down_b_.push_back(Tensor::zeros({chans_[s]}));
    enc_sdem_.push_back(SdemParams::init(t, chans_[s], cfg_.neuron, vc, rng));
  }
  for (int s = cfg_.scales - 2; s >= 0; --s) {
    fuse_k_.push_back(kaiming({chans_[s], chans_[s + 1] + chans_[s], 1, 1},
                              rng, chans_[s + 1] + chans_[s]));
    fuse_b_.push_back(Tensor::zeros({chans_[s]}));
    if (s > 0) dec_sdem_.push_back(SdemParams::init(t, chans_[s], cfg_.neuron, vc, rng));
  }
  dec_smu_ = SmuParams::init(t, chans_[0], cfg_.neuron, vc, rng);
  for (int i = 0; i < cfg_.refine_blocks; ++i)
    refine_.push_back(SdemParams::init(t, chans_[0], cfg_.neuron, vc, rng));

  // Zero head: the untrained network reproduces its input exactly.
  head_k_ = Tensor::zeros({3, chans_[0], 3, 3});
  head_b_ = Tensor::zeros({3});

  visit([](const std::string&, Tensor& p) { p.set_requires_grad(true); }, false);
}

Tensor DerainNet::encode_input(const Tensor& rainy, ForwardCtx& ctx) {
  if (rainy.rank() != 3 || rainy.size(0) != 3)
    throw DimensionError("encode_input: [3,H,W] input required");
  for (double v : rainy.data())
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("encode_input: pixels outside [0, 1]");
  cfg_.validate_input(rainy.size(1), rainy.size(2));
  // Direct coding: the frame is repeated for every timestep.
  std::vector<Tensor> frames(static_cast<size_t>(cfg_.timesteps), rainy);
  Tensor x = stack_steps(frames);
  Tensor stem = bias_add(conv2d(x, stem_k_, 1, 1), stem_b_);
  if (ctx.counter)
    ctx.counter->add_dense("stem", static_cast<double>(conv2d_macs(x.shape(), stem_k_.shape(), 1, 1)));
  return temporal_embedding(stem, temb_);
}

Tensor DerainNet::forward(const Tensor& rainy, ForwardCtx& ctx) {
  Tensor cur = encode_input(rainy, ctx);
  std::vector<Tensor> skips;
  cur = smu_forward(cur, enc_smu_, ctx, "enc.smu");
  skips.push_back(cur);
  for (int s = 1; s < cfg_.scales; ++s) {
    Tensor down = bias_add(conv2d(cur, down_k_[static_cast<size_t>(s - 1)], 2, 1),
                           down_b_[static_cast<size_t>(s - 1)]);
    if (ctx.counter)
      ctx.counter->add_dense("down" + std::to_string(s),
                             static_cast<double>(conv2d_macs(
                                 cur.shape(), down_k_[static_cast<size_t>(s - 1)].shape(), 2, 1)));
    cur = sdem_forward(down, enc_sdem_[static_cast<size_t>(s - 1)], ctx,
                       "enc.sdem" + std::to_string(s));
    if (s < cfg_.scales - 1) skips.push_back(cur);
  }
  size_t fuse_idx = 0;
  for (int s = cfg_.scales - 2; s >= 0; --s, ++fuse_idx) {
    const Tensor& skip = skips[static_cast<size_t>(s)];
    cur = bilinear_resize(cur, skip.size(2), skip.size(3));
    cur = concat_channels(cur, skip);
    Tensor fused = bias_add(conv2d(cur, fuse_k_[fuse_idx], 1, 0), fuse_b_[fuse_idx]);
    if (ctx.counter)
      ctx.counter->add_dense("fuse" + std::to_string(s),
                             static_cast<double>(
                                 conv2d_macs(cur.shape(), fuse_k_[fuse_idx].shape(), 1, 0)));
    if (s > 0) {
      cur = sdem_forward(fused, dec_sdem_[fuse_idx], ctx, "dec.sdem" + std::to_string(s));
    } else {
      cur = smu_forward(fused, dec_smu_, ctx, "dec.smu");
    }
  }
  for (size_t i = 0; i < refine_.size(); ++i)
    cur = sdem_forward(cur, refine_[i], ctx, "refine" + std::to_string(i));

  Tensor feat = reduce_mean(cur, {0});  // collapse time: [1, C, H, W]
  Tensor residual = bias_add(conv2d(feat, head_k_, 1, 1), head_b_);
  if (ctx.counter)
    ctx.counter->add_dense("head",
                           static_cast<double>(conv2d_macs(feat.shape(), head_k_.shape(), 1, 1)));
  last_residual_ = residual.detach();
  Tensor rainy4 = reshape(rainy, {1, 3, rainy.size(1), rainy.size(2)});
  return clamp(sub(rainy4, residual), 0.0, 1.0);
}

void DerainNet::visit(const ParamVisitor& fn, bool include_buffers) {
  fn("stem.k", stem_k_);
  fn("stem.b", stem_b_);
  fn("temb", temb_);
  enc_smu_.visit("enc.smu", fn, include_buffers);
  for (size_t s = 0; s < down_k_.size(); ++s) {
    fn("down" + std::to_string(s + 1) + ".k", down_k_[s]);
    fn("down" + std::to_string(s + 1) + ".b", down_b_[s]);
    enc_sdem_[s].visit("enc.sdem" + std::to_string(s + 1), fn, include_buffers);
  }
  size_t fuse_idx = 0;
  for (int s = cfg_.scales - 2; s >= 0; --s, ++fuse_idx) {
    fn("fuse" + std::to_string(s) + ".k", fuse_k_[fuse_idx]);
    fn("fuse" + std::to_string(s) + ".b", fuse_b_[fuse_idx]);
    if (s > 0) dec_sdem_[fuse_idx].visit("dec.sdem" + std::to_string(s), fn, include_buffers);
  }
  dec_smu_.visit("dec.smu", fn, include_buffers);
  for (size_t i = 0; i < refine_.size(); ++i)
    refine_[i].visit("refine" + std::to_string(i), fn, include_buffers);
  fn("head.k", head_k_);
  fn("head.b", head_b_);
}

std::vector<Parameter> DerainNet::parameters() {
  std::vector<Parameter> out;
  std::set<std::string> names;
  visit(
      [&](const std::string& name, Tensor& t) {
        if (!names.insert(name).second) throw ContractError("duplicate parameter name: " + name);
        out.push_back({name, t});
      },
      false);
  return out;
}

std::vector<Parameter> DerainNet::state() {
  std::vector<Parameter> out;
  std::set<std::string> names;
  visit(
      [&](const std::string& name, Tensor& t) {
        if (!names.insert(name).second) throw ContractError("duplicate parameter name: " + name);
        out.push_back({name, t});
      },
      true);
  return out;
}

void DerainNet::load_state(const Checkpoint& ck) {
  std::map<std::string, const Tensor*> avail;
  for (const auto& [name, t] : ck.tensors) avail[name] = &t;
  std::vector<Parameter> st = state();
  for (Parameter& p : st) {
    auto it = avail.find(p.name);
    if (it == avail.end()) throw ValueError("checkpoint missing tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw DimensionError("checkpoint tensor '" + p.name + "' has shape " +
                           shape_str(it->second->shape()) + ", expected " +
                           shape_str(p.tensor.shape()));
    p.tensor.mut_data() = it->second->data();
    avail.erase(it);
  }
  if (!avail.empty())
    throw ValueError("checkpoint holds unknown tensor '" + avail.begin()->first + "'");
}

void DerainNet::set_vlif_variant(NeuronVariant v) {
  cfg_.vlif_variant = v;
  auto patch_sdem = [&](SdemParams& p) { p.s2.vlif.config().variant = v; };
  auto patch_smu = [&](SmuParams& p) {
    patch_sdem(p.sdem);
    p.vlif_t.config().variant = v;
  };
  patch_smu(enc_smu_);
  patch_smu(dec_smu_);
  for (auto& b : enc_sdem_) patch_sdem(b);
  for (auto& b : dec_sdem_) patch_sdem(b);
  for (auto& b : refine_) patch_sdem(b);
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(std::vector<Parameter> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params_[i].tensor.numel()), 0.0);
    v_[i].assign(static_cast<size_t>(params_[i].tensor.numel()), 0.0);
  }
}

void Adam::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

void Adam::step() { step_with_lr(lr_); }

void Adam::step_with_lr(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& data = p.mut_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < data.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double cosine_lr(double base, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// ---------------------------------------------------------------------------
// Training loop

Checkpoint make_checkpoint(DerainNet& net, const std::string& manifest_json) {
  Checkpoint ck;
  ck.manifest_json = manifest_json;
  for (const Parameter& p : net.state()) ck.tensors.emplace_back(p.name, p.tensor.detach());
  return ck;
}

TrainResult train_derain(DerainNet& net, const std::vector<ImagePair>& data, const TrainConfig& tc,
                         const std::string& out_dir, uint64_t seed,
                         const std::string& manifest_json) {
  tc.validate();
  if (data.empty()) throw ValueError("train: empty dataset");
  fs::create_directories(out_dir);
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");

  std::vector<Parameter> params = net.parameters();
  Adam opt(params, tc.learning_rate);
  Rng sampler(seed ^ 0x7261696eull);

  TrainResult result;
  const auto t_start = std::chrono::steady_clock::now();
  for (int iter = 0; iter < tc.iterations; ++iter) {
    const double lr_now = tc.lr_schedule == "cosine"
                              ? cosine_lr(tc.learning_rate, iter, tc.iterations)
                              : tc.learning_rate;
    opt.zero_grad();
    double loss_acc = 0.0;
    Tensor last_pred;
    ImagePair last_batch;
    for (int b = 0; b < tc.batch_size; ++b) {
      const ImagePair& pick = data[sampler.next_below(data.size())];
      ImagePair patch = random_crop(pick, std::min<int64_t>(tc.patch_size, pick.rainy.h), sampler);
      Tensor x = image_to_tensor(patch.rainy);
      Tensor target = reshape(image_to_tensor(patch.clean), {1, 3, patch.clean.h, patch.clean.w});
      ForwardCtx ctx;
      ctx.training = true;
      Tensor pred = net.forward(x, ctx);
      Tensor loss = charbonnier(pred, target, tc.charbonnier_eps);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        save_spkt((fs::path(out_dir) / "nonfinite_rainy.spkt").string(), x.detach());
        save_spkt((fs::path(out_dir) / "nonfinite_clean.spkt").string(), target.detach());
        throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(iter) +
                                 "; offending batch dumped to " + out_dir);
      }
      backward(loss);
      loss_acc += lv;
      last_pred = pred;
      last_batch = std::move(patch);
    }
    if (tc.batch_size > 1) {
      const double inv = 1.0 / static_cast<double>(tc.batch_size);
      for (Parameter& p : params)
        if (p.tensor.has_grad())
          for (double& g : p.tensor.mut_grad()) g *= inv;
    }
    opt.step_with_lr(lr_now);

    if (iter == 0 || (iter + 1) % tc.log_interval == 0 || iter + 1 == tc.iterations) {
      const double batch_psnr = psnr(tensor_to_image(last_pred), last_batch.clean);
      const double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
              .count();
      TrainLogEntry e{iter + 1, loss_acc / tc.batch_size, batch_psnr, lr_now, wall_ms};
      result.log.push_back(e);
      nlohmann::json j = {{"iteration", e.iteration},
                          {"loss", e.loss},
                          {"psnr", std::isfinite(e.psnr_db) ? e.psnr_db : 99.0},
                          {"lr", e.lr},
                          {"wall_ms", e.wall_ms}};
      metrics << j.dump() << "\n";
      metrics.flush();
      if (result.best_iteration < 0 || batch_psnr > result.best_psnr) {
        result.best_psnr = batch_psnr;
        result.best_iteration = iter + 1;
        result.best_checkpoint = (fs::path(out_dir) / "checkpoint_best.ckpt").string();
        save_checkpoint(result.best_checkpoint, make_checkpoint(net, manifest_json));
      }
    }
  }
  result.last_checkpoint = (fs::path(out_dir) / "checkpoint_last.ckpt").string();
  save_checkpoint(result.last_checkpoint, make_checkpoint(net, manifest_json));
  return result;
}

EnergyReport profile_energy(DerainNet& net, const Tensor& rainy) {
  OpCounter counter;
  ForwardCtx ctx;
  ctx.counter = &counter;
  net.forward(rainy, ctx);
  return energy_from_counter(counter);
}

}  // namespace vlif
