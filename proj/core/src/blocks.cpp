#include "vlif/blocks.hpp"

#include <algorithm>

#include "vlif/ops.hpp"

namespace vlif {

GateParams GateParams::init(int64_t len, Rng& rng) {
  const int64_t hid = std::max<int64_t>(1, len / 4);
  GateParams p;
  p.w1 = kaiming({hid, len}, rng, len);
  p.b1 = Tensor::zeros({hid});
  p.w2 = kaiming({len, hid}, rng, hid);
  // Positive bias starts the gates near open (sigmoid(2) ~ 0.88), so stacked
  // gated blocks do not silence the spiking path at init.
  p.b2 = Tensor::full({len}, 2.0);
  return p;
}

void GateParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w1", w1);
  fn(prefix + ".b1", b1);
  fn(prefix + ".w2", w2);
  fn(prefix + ".b2", b2);
}

Tensor se_gate(const Tensor& row, const GateParams& p) {
  Tensor hidden = leaky_relu(linear(row, p.w1, p.b1), 0.1);
  return sigmoid(linear(hidden, p.w2, p.b2));
}

SpatialGateParams SpatialGateParams::init(Rng& rng) {
  SpatialGateParams p;
  p.k1 = kaiming({4, 1, 3, 3}, rng, 9);
  p.b1 = Tensor::zeros({4});
  p.k2 = kaiming({1, 4, 3, 3}, rng, 36);
  p.b2 = Tensor::full({1}, 2.0);
  return p;
}

void SpatialGateParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".k1", k1);
  fn(prefix + ".b1", b1);
  fn(prefix + ".k2", k2);
  fn(prefix + ".b2", b2);
}

MdaParams MdaParams::init(int64_t timesteps, int64_t channels, Rng& rng) {
  MdaParams p;
  p.temporal = GateParams::init(timesteps, rng);
  p.channel = GateParams::init(channels, rng);
  p.spatial = SpatialGateParams::init(rng);
  return p;
}

void MdaParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  temporal.visit(prefix + ".t", fn);
  channel.visit(prefix + ".c", fn);
  spatial.visit(prefix + ".s", fn);
}

Tensor mda(const Tensor& x, const MdaParams& p, ForwardCtx& ctx, const std::string& name) {
  if (x.rank() != 4) throw DimensionError("mda: rank-4 input required");
  const int64_t t = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);

  Tensor tg = se_gate(reshape(reduce_mean(x, {1, 2, 3}), {1, t}), p.temporal);
  Tensor y = broadcast_mul(x, reshape(tg, {t, 1, 1, 1}));

  Tensor cg = se_gate(reshape(reduce_mean(y, {0, 2, 3}), {1, c}), p.channel);
  Tensor z = broadcast_mul(y, reshape(cg, {1, c, 1, 1}));

  Tensor m = reduce_mean(z, {0, 1});  // [1,1,H,W]
  Tensor sg = sigmoid(
      bias_add(conv2d(leaky_relu(bias_add(conv2d(m, p.spatial.k1, 1, 1), p.spatial.b1), 0.1),
                      p.spatial.k2, 1, 1),
               p.spatial.b2));
  Tensor out = broadcast_mul(z, sg);

  if (ctx.counter) {
    const int64_t t_hid = p.temporal.w1.size(0), c_hid = p.channel.w1.size(0);
    const double gate_macs = static_cast<double>(2 * t * t_hid + 2 * c * c_hid) +
                             static_cast<double>((4 * 9 + 4 * 9) * h * w);
    ctx.counter->add_dense(name + ".gates", gate_macs);
  }
  return out;
}

BnParams BnParams::init(int64_t channels) {
  BnParams p;
  p.gamma = Tensor::full({channels}, 1.0);
  p.beta = Tensor::zeros({channels});
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::full({channels}, 1.0);
  return p;
}

void BnParams::visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
  if (include_buffers) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
}

Tensor bn(const Tensor& x, BnParams& p, bool training) {
  return batch_norm(x, p.gamma, p.beta, p.running_mean, p.running_var, training, p.eps, p.momentum);
}

SdemStageParams SdemStageParams::init(SdemStageKind kind, int64_t timesteps, int64_t channels,
                                      const NeuronConfig& neuron, const VlifConfig& vlif_cfg,
                                      Rng& rng) {
  SdemStageParams p;
  p.kind = kind;
  p.alpha = Tensor::scalar(1.0);
  p.beta2 = Tensor::scalar(1.0);
  p.conv_main = kaiming({channels, channels, 3, 3}, rng, channels * 9);
  p.conv_shortcut = kaiming({channels, channels, 3, 3}, rng, channels * 9);
  p.bn_main = BnParams::init(channels);
  p.bn_shortcut = BnParams::init(channels);
  p.neuron = neuron;
  if (kind == SdemStageKind::vlif_c) {
    VlifConfig cc = vlif_cfg;
    cc.compression = Compression::channel;
    p.vlif = VlifCell(cc, timesteps, channels, rng);
  }
  return p;
}

void SdemStageParams::visit(const std::string& prefix, const ParamVisitor& fn,
                            bool include_buffers) {
  fn(prefix + ".alpha", alpha);
  fn(prefix + ".beta2", beta2);
  fn(prefix + ".conv_main", conv_main);
  fn(prefix + ".conv_shortcut", conv_shortcut);
  bn_main.visit(prefix + ".bn_main", fn, include_buffers);
  bn_shortcut.visit(prefix + ".bn_shortcut", fn, include_buffers);
  if (kind == SdemStageKind::vlif_c) vlif.visit_params(prefix + ".vlif", fn);
}

namespace {

// The decomposition arithmetic fused into one node:
//   x_h = alpha*ind, x_l = x - x_h, pre = x_h(.)x + beta2*x_l + x.
// Value-identical to the op-by-op form (same rounding sequence); the halves
// come back as plain tensors for diagnostics.
Tensor decomposition_mix(const Tensor& x, const Tensor& ind, const Tensor& alpha,
                         const Tensor& beta2, Tensor& x_h_out, Tensor& x_l_out) {
  const double a = alpha.data()[0];
  const double b2 = beta2.data()[0];
  const auto& xd = x.data();
  const auto& id = ind.data();
  std::vector<double> pre(xd.size()), xh(xd.size()), xl(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) {
    const double h = a * id[i];
    const double l = xd[i] - h;
    xh[i] = h;
    xl[i] = l;
    pre[i] = (h * xd[i] + b2 * l) + xd[i];
  }
  x_h_out = Tensor::from_data(x.shape(), std::move(xh));
  x_l_out = Tensor::from_data(x.shape(), std::move(xl));
  return make_node(
      x.shape(), std::move(pre), {x, ind, alpha, beta2},
      [a, b2](detail::Node& self) {
        const auto& xd2 = self.inputs[0]->data;
        const auto& id2 = self.inputs[1]->data;
        const bool need_dx = self.inputs[0]->requires_grad;
        const bool need_di = self.inputs[1]->requires_grad;
        const bool need_da = self.inputs[2]->requires_grad;
        const bool need_db = self.inputs[3]->requires_grad;
        double* gx = need_dx ? self.inputs[0]->grad_buf().data() : nullptr;
        double* gi = need_di ? self.inputs[1]->grad_buf().data() : nullptr;
        double da = 0.0, db = 0.0;
        for (size_t i = 0; i < xd2.size(); ++i) {
          const double g = self.grad[i];
          if (need_dx) gx[i] += g * (a * id2[i] + b2 + 1.0);
          if (need_di) gi[i] += g * a * (xd2[i] - b2);
          if (need_da) da += g * id2[i] * (xd2[i] - b2);
          if (need_db) db += g * (xd2[i] - a * id2[i]);
        }
        if (need_da) self.inputs[2]->grad_buf()[0] += da;
        if (need_db) self.inputs[3]->grad_buf()[0] += db;
      },
      "decomposition_mix");
}

}  // namespace

SdemStageOut sdem_stage(const Tensor& x, SdemStageParams& p, ForwardCtx& ctx,
                        const std::string& name) {
  if (x.rank() != 4) throw DimensionError("sdem_stage: rank-4 input required");
  Tensor indicator;
  if (p.kind == SdemStageKind::lif) {
    ScanResult scan = neuron_scan(x, p.neuron, NeuronVariant::lif, ctx.mode);
    indicator = scan.spikes;
    if (ctx.counter)
      ctx.counter->add_neuron(name + ".lif", static_cast<double>(x.numel()),
                              nonzero_fraction(indicator));
  } else {
    Tensor compressed = p.vlif.forward(x, ctx.mode, ctx.counter, name + ".vlif");
    indicator = bilinear_resize(compressed, x.size(2), x.size(3));
  }
  Tensor x_h, x_l;
  Tensor pre = decomposition_mix(x, indicator, p.alpha, p.beta2, x_h, x_l);
  Tensor refined = bn(conv2d(pre, p.conv_main, 1, 1), p.bn_main, ctx.training);
  Tensor shortcut = bn(conv2d(x, p.conv_shortcut, 1, 1), p.bn_shortcut, ctx.training);
  if (ctx.counter) {
    ctx.counter->add_dense(name + ".conv_main",
                           static_cast<double>(conv2d_macs(pre.shape(), p.conv_main.shape(), 1, 1)));
    ctx.counter->add_dense(name + ".conv_shortcut", static_cast<double>(conv2d_macs(
                                                        x.shape(), p.conv_shortcut.shape(), 1, 1)));
  }
  Tensor refined_prime = add(refined, shortcut);
  return {refined_prime, refined, shortcut, indicator, x_h, x_l};
}

SdemParams SdemParams::init(int64_t timesteps, int64_t channels, const NeuronConfig& neuron,
                            const VlifConfig& vlif_cfg, Rng& rng) {
  SdemParams p;
  p.s1 = SdemStageParams::init(SdemStageKind::lif, timesteps, channels, neuron, vlif_cfg, rng);
  p.s2 = SdemStageParams::init(SdemStageKind::vlif_c, timesteps, channels, neuron, vlif_cfg, rng);
  p.att = MdaParams::init(timesteps, channels, rng);
  return p;
}

void SdemParams::visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers) {
  s1.visit(prefix + ".s1", fn, include_buffers);
  s2.visit(prefix + ".s2", fn, include_buffers);
  att.visit(prefix + ".att", fn);
}

Tensor sdem_forward(const Tensor& x, SdemParams& p, ForwardCtx& ctx, const std::string& name) {
  SdemStageOut s1 = sdem_stage(x, p.s1, ctx, name + ".s1");
  SdemStageOut s2 = sdem_stage(s1.refined_prime, p.s2, ctx, name + ".s2");
  Tensor x_mda = mda(s2.refined, p.att, ctx, name + ".att");
  // The stage-2 shortcut contributes twice: once inside refined' and once here.
  return add(add(s2.refined_prime, s2.shortcut), x_mda);
}

SuParams SuParams::init(int64_t timesteps, int64_t channels, const NeuronConfig& neuron, Rng& rng) {
  SuParams p;
  p.neuron = neuron;
  p.bn = BnParams::init(channels);
  p.conv = kaiming({channels, channels, 3, 3}, rng, channels * 9);
  p.att = MdaParams::init(timesteps, channels, rng);
  return p;
}

void SuParams::visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers) {
  bn.visit(prefix + ".bn", fn, include_buffers);
  fn(prefix + ".conv", conv);
  att.visit(prefix + ".att", fn);
}

Tensor spiking_unit(const Tensor& x, SuParams& p, ForwardCtx& ctx, const std::string& name) {
  if (x.rank() != 4) throw DimensionError("spiking_unit: rank-4 input required");
  ScanResult scan = neuron_scan(x, p.neuron, NeuronVariant::lif, ctx.mode);
  const double rate = nonzero_fraction(scan.spikes);
  Tensor normed = bn(scan.spikes, p.bn, ctx.training);
  Tensor y = conv2d(normed, p.conv, 1, 1);
  if (ctx.counter) {
    ctx.counter->add_neuron(name + ".lif", static_cast<double>(x.numel()), rate);
    // BN folds into the conv at inference; the conv is driven by the spike map.
    ctx.counter->add_spike(name + ".conv",
                           static_cast<double>(conv2d_macs(x.shape(), p.conv.shape(), 1, 1)), rate);
  }
  return mda(y, p.att, ctx, name + ".att");
}

SmuParams SmuParams::init(int64_t timesteps, int64_t channels, const NeuronConfig& neuron,
                          const VlifConfig& vlif_cfg, Rng& rng) {
  SmuParams p;
  p.sdem = SdemParams::init(timesteps, channels, neuron, vlif_cfg, rng);
  VlifConfig tc = vlif_cfg;
  tc.compression = Compression::temporal;
  p.vlif_t = VlifCell(tc, timesteps, channels, rng);
  p.su1 = SuParams::init(timesteps, channels, neuron, rng);
  p.su2 = SuParams::init(timesteps, channels, neuron, rng);
  p.att = MdaParams::init(timesteps, channels, rng);
  return p;
}

void SmuParams::visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers) {
  sdem.visit(prefix + ".sdem", fn, include_buffers);
  vlif_t.visit_params(prefix + ".vlif_t", fn);
  su1.visit(prefix + ".su1", fn, include_buffers);
  su2.visit(prefix + ".su2", fn, include_buffers);
  att.visit(prefix + ".att", fn);
}

Tensor smu_inner(const Tensor& x, SmuParams& p, ForwardCtx& ctx, const std::string& name) {
  if (x.rank() != 4) throw DimensionError("smu: rank-4 input required");
  Tensor d = sdem_forward(x, p.sdem, ctx, name + ".sdem");
  Tensor v = p.vlif_t.forward(d, ctx.mode, ctx.counter, name + ".vlif_t");
  Tensor u = spiking_unit(v, p.su1, ctx, name + ".su1");
  u = spiking_unit(u, p.su2, ctx, name + ".su2");
  return bilinear_resize(u, x.size(2), x.size(3));
}

Tensor smu_forward(const Tensor& x, SmuParams& p, ForwardCtx& ctx, const std::string& name) {
  Tensor merged = add(smu_inner(x, p, ctx, name), x);
  return mda(merged, p.att, ctx, name + ".att");
}

Tensor temporal_embedding(const Tensor& x, const Tensor& table) { return add_time_table(x, table); }

}  // namespace vlif
