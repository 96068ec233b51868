#include "vlif/vlif.hpp"

#include <cmath>

#include "vlif/ops.hpp"

namespace vlif {

void VlifConfig::validate() const {
  if (r < 1) throw ValueError("vlif: r must be >= 1");
  neuron.validate();
}

namespace {

void check_patch_input(const Tensor& x, int r) {
  if (x.rank() != 4) throw DimensionError("patch_to_time: rank-4 input required");
  if (x.size(2) % r != 0 || x.size(3) % r != 0)
    throw DimensionError("patch_to_time: spatial extents " + shape_str(x.shape()) +
                         " not divisible by r=" + std::to_string(r));
}

}  // namespace

Tensor patch_to_time(const Tensor& x, const VlifConfig& cfg) {
  cfg.validate();
  const int r = cfg.r;
  check_patch_input(x, r);
  if (r == 1) return reshape(x, x.shape());  // identity (still a graph node)
  const int64_t t = x.size(0), c = x.size(1), h = x.size(2) / r, w = x.size(3) / r;
  const int64_t r2 = static_cast<int64_t>(r) * r;
  const bool row_major = cfg.patch_order == PatchOrder::row_major;
  const int64_t in_w = x.size(3);
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  // out[t*r2 + p, c, y, x] = in[t, c, y*r + i, x*r + j], p = i*r + j.
  for (int64_t tt = 0; tt < t; ++tt)
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < r; ++j) {
        const int64_t p = row_major ? i * r + j : j * r + i;
        for (int64_t ch = 0; ch < c; ++ch) {
          double* dst = out.data() + (((tt * r2 + p) * c + ch) * h) * w;
          const double* src = xd.data() + ((tt * c + ch) * h * r + i) * in_w + j;
          for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) dst[y * w + xx] = src[y * r * in_w + xx * r];
        }
      }
  return make_node({t * r2, c, h, w}, std::move(out), {x},
                   [t, c, h, w, r, r2, in_w, row_major](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     for (int64_t tt = 0; tt < t; ++tt)
                       for (int64_t i = 0; i < r; ++i)
                         for (int64_t j = 0; j < r; ++j) {
                           const int64_t p = row_major ? i * r + j : j * r + i;
                           for (int64_t ch = 0; ch < c; ++ch) {
                             const double* src =
                                 self.grad.data() + (((tt * r2 + p) * c + ch) * h) * w;
                             double* dst = g.data() + ((tt * c + ch) * h * r + i) * in_w + j;
                             for (int64_t y = 0; y < h; ++y)
                               for (int64_t xx = 0; xx < w; ++xx)
                                 dst[y * r * in_w + xx * r] += src[y * w + xx];
                           }
                         }
                   },
                   "patch_to_time");
}

Tensor time_to_patch(const Tensor& x, const VlifConfig& cfg) {
  cfg.validate();
  const int r = cfg.r;
  if (x.rank() != 4) throw DimensionError("time_to_patch: rank-4 input required");
  const int64_t r2 = static_cast<int64_t>(r) * r;
  if (x.size(0) % r2 != 0)
    throw DimensionError("time_to_patch: leading extent " + std::to_string(x.size(0)) +
                         " not divisible by r^2=" + std::to_string(r2));
  if (r == 1) return reshape(x, x.shape());
  const int64_t t = x.size(0) / r2, c = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t out_w = w * r;
  const bool row_major = cfg.patch_order == PatchOrder::row_major;
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (int64_t tt = 0; tt < t; ++tt)
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < r; ++j) {
        const int64_t p = row_major ? i * r + j : j * r + i;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* src = xd.data() + (((tt * r2 + p) * c + ch) * h) * w;
          double* dst = out.data() + ((tt * c + ch) * h * r + i) * out_w + j;
          for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) dst[y * r * out_w + xx * r] = src[y * w + xx];
        }
      }
  return make_node({t, c, h * r, w * r}, std::move(out), {x},
                   [t, c, h, w, r, r2, out_w, row_major](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     for (int64_t tt = 0; tt < t; ++tt)
                       for (int64_t i = 0; i < r; ++i)
                         for (int64_t j = 0; j < r; ++j) {
                           const int64_t p = row_major ? i * r + j : j * r + i;
                           for (int64_t ch = 0; ch < c; ++ch) {
                             double* dst = g.data() + (((tt * r2 + p) * c + ch) * h) * w;
                             const double* src =
                                 self.grad.data() + ((tt * c + ch) * h * r + i) * out_w + j;
                             for (int64_t y = 0; y < h; ++y)
                               for (int64_t xx = 0; xx < w; ++xx)
                                 dst[y * w + xx] += src[y * r * out_w + xx * r];
                           }
                         }
                   },
                   "time_to_patch");
}

VlifIntegrateResult vlif_integrate(const Tensor& x_pt, const VlifConfig& cfg, SpikeMode mode) {
  cfg.validate();
  ScanResult r = neuron_scan(x_pt, cfg.neuron, cfg.variant, mode);
  return {r.spikes, r.f_map};
}

TemporalAttentionParams TemporalAttentionParams::init(int64_t steps, Rng& rng) {
  const int64_t hid = std::max<int64_t>(1, steps / 4);
  TemporalAttentionParams p;
  p.w1 = kaiming({hid, steps}, rng, steps);
  p.b1 = Tensor::zeros({hid});
  p.w2 = kaiming({steps, hid}, rng, hid);
  p.b2 = Tensor::full({steps}, 2.0);  // gates start near open
  return p;
}

Tensor temporal_attention(const Tensor& spikes, const TemporalAttentionParams& p) {
  if (spikes.rank() != 4) throw DimensionError("temporal_attention: rank-4 input required");
  const int64_t steps = spikes.size(0);
  if (p.w1.size(1) != steps || p.w2.size(0) != steps)
    throw DimensionError("temporal_attention: gate sized for " + std::to_string(p.w1.size(1)) +
                         " steps, input has " + std::to_string(steps));
  Tensor pooled = reduce_mean(spikes, {1, 2, 3});        // [S,1,1,1]
  Tensor v = reshape(pooled, {1, steps});
  Tensor hidden = leaky_relu(linear(v, p.w1, p.b1), 0.1);
  Tensor gate = sigmoid(linear(hidden, p.w2, p.b2));     // [1,S] in (0,1)
  return broadcast_mul(spikes, reshape(gate, {steps, 1, 1, 1}));
}

CompressTParams CompressTParams::init(int64_t t_out, int r, Rng& rng) {
  (void)rng;
  // Unit taps (sum aggregation): keeps the compressed magnitudes above the
  // firing threshold of downstream unit-threshold neurons at init.
  CompressTParams p;
  p.w = Tensor::full({t_out, static_cast<int64_t>(r) * r}, 1.0);
  return p;
}

CompressTParams CompressTParams::averaging(int64_t t_out, int r) {
  const int64_t r2 = static_cast<int64_t>(r) * r;
  CompressTParams p;
  p.w = Tensor::full({t_out, r2}, 1.0 / static_cast<double>(r2));
  return p;
}

Tensor vlif_compress_t(const Tensor& s_attn, int r, const CompressTParams& p) {
  if (s_attn.rank() != 4) throw DimensionError("vlif_compress_t: rank-4 input required");
  const int64_t r2 = static_cast<int64_t>(r) * r;
  if (s_attn.size(0) % r2 != 0)
    throw DimensionError("vlif_compress_t: leading extent " + std::to_string(s_attn.size(0)) +
                         " not divisible by r^2=" + std::to_string(r2));
  const int64_t t = s_attn.size(0) / r2;
  if (p.w.rank() != 2 || p.w.size(0) != t || p.w.size(1) != r2)
    throw DimensionError("vlif_compress_t: kernel " + shape_str(p.w.shape()) + ", expected [" +
                         std::to_string(t) + "," + std::to_string(r2) + "]");
  const int64_t chunk = s_attn.size(1) * s_attn.size(2) * s_attn.size(3);
  const auto& xd = s_attn.data();
  const auto& wd = p.w.data();
  std::vector<double> out(static_cast<size_t>(t * chunk), 0.0);
  for (int64_t tt = 0; tt < t; ++tt)
    for (int64_t j = 0; j < r2; ++j) {
      const double wv = wd[static_cast<size_t>(tt * r2 + j)];
      const double* src = xd.data() + (tt * r2 + j) * chunk;
      double* dst = out.data() + tt * chunk;
      for (int64_t i = 0; i < chunk; ++i) dst[i] += wv * src[i];
    }
  return make_node({t, s_attn.size(1), s_attn.size(2), s_attn.size(3)}, std::move(out),
                   {s_attn, p.w},
                   [t, r2, chunk](detail::Node& self) {
                     const auto& xd2 = self.inputs[0]->data;
                     const auto& wd2 = self.inputs[1]->data;
                     for (int64_t tt = 0; tt < t; ++tt)
                       for (int64_t j = 0; j < r2; ++j) {
                         const double* dy = self.grad.data() + tt * chunk;
                         if (self.inputs[0]->requires_grad) {
                           auto& g = self.inputs[0]->grad_buf();
                           const double wv = wd2[static_cast<size_t>(tt * r2 + j)];
                           double* dst = g.data() + (tt * r2 + j) * chunk;
                           for (int64_t i = 0; i < chunk; ++i) dst[i] += wv * dy[i];
                         }
                         if (self.inputs[1]->requires_grad) {
                           const double* src = xd2.data() + (tt * r2 + j) * chunk;
                           double acc = 0.0;
                           for (int64_t i = 0; i < chunk; ++i) acc += dy[i] * src[i];
                           self.inputs[1]->grad_buf()[static_cast<size_t>(tt * r2 + j)] += acc;
                         }
                       }
                   },
                   "vlif_compress_t");
}

CompressCParams CompressCParams::init(int64_t channels, int r, Rng& rng) {
  const int64_t r2 = static_cast<int64_t>(r) * r;
  CompressCParams p;
  p.w1 = kaiming({channels, r2 * channels, 1, 1}, rng, r2 * channels);
  p.b1 = Tensor::zeros({channels});
  p.w2 = kaiming({channels, channels, 1, 1}, rng, channels);
  p.b2 = Tensor::zeros({channels});
  return p;
}

Tensor vlif_compress_c(const Tensor& s_attn, int r, const CompressCParams& p) {
  if (s_attn.rank() != 4) throw DimensionError("vlif_compress_c: rank-4 input required");
  const int64_t r2 = static_cast<int64_t>(r) * r;
  if (s_attn.size(0) % r2 != 0)
    throw DimensionError("vlif_compress_c: leading extent " + std::to_string(s_attn.size(0)) +
                         " not divisible by r^2=" + std::to_string(r2));
  const int64_t t = s_attn.size(0) / r2;
  const int64_t c = s_attn.size(1), h = s_attn.size(2), w = s_attn.size(3);
  // Consecutive pseudo-steps are contiguous, so folding them into the channel
  // axis is a pure view: folded channel index = j*C + c.
  Tensor z = reshape(s_attn, {t, r2 * c, h, w});
  Tensor hidden = leaky_relu(bias_add(conv2d(z, p.w1, 1, 0), p.b1), 0.1);
  return bias_add(conv2d(hidden, p.w2, 1, 0), p.b2);
}

VlifCell::VlifCell(VlifConfig cfg, int64_t timesteps, int64_t channels, Rng& rng)
    : cfg_(cfg), timesteps_(timesteps), channels_(channels) {
  cfg_.validate();
  const int64_t steps = timesteps * cfg.r * cfg.r;
  attn_ = TemporalAttentionParams::init(steps, rng);
  if (cfg_.compression == Compression::temporal) {
    ct_ = CompressTParams::init(timesteps, cfg.r, rng);
  } else {
    cc_ = CompressCParams::init(channels, cfg.r, rng);
  }
}

Tensor VlifCell::forward(const Tensor& x, SpikeMode mode, OpCounter* counter,
                         const std::string& name) const {
  if (x.rank() != 4) throw DimensionError("vlif: rank-4 input required");
  if (x.size(0) != timesteps_ || x.size(1) != channels_)
    throw DimensionError("vlif: input " + shape_str(x.shape()) + ", cell built for T=" +
                         std::to_string(timesteps_) + " C=" + std::to_string(channels_));
  Tensor pt = patch_to_time(x, cfg_);
  VlifIntegrateResult integ = vlif_integrate(pt, cfg_, mode);
  last_spikes_ = integ.spikes.detach();
  last_f_map_ = integ.f_map;
  Tensor s_attn = temporal_attention(integ.spikes, attn_);
  if (counter) {
    counter->add_neuron(name + ".neuron", static_cast<double>(pt.numel()),
                        nonzero_fraction(integ.spikes));
    const int64_t steps = pt.size(0);
    const int64_t hid = attn_.w1.size(0);
    counter->add_dense(name + ".attn", static_cast<double>(2 * steps * hid));
  }
  const double rate = counter ? nonzero_fraction(s_attn) : 0.0;
  Tensor out;
  if (cfg_.compression == Compression::temporal) {
    out = vlif_compress_t(s_attn, cfg_.r, ct_);
    if (counter) counter->add_spike(name + ".compress_t", static_cast<double>(pt.numel()), rate);
  } else {
    out = vlif_compress_c(s_attn, cfg_.r, cc_);
    if (counter) {
      const int64_t r2 = static_cast<int64_t>(cfg_.r) * cfg_.r;
      const int64_t t = pt.size(0) / r2, h = pt.size(2), w = pt.size(3);
      const double macs = static_cast<double>(t * h * w) *
                          static_cast<double>(channels_ * r2 * channels_ + channels_ * channels_);
      counter->add_spike(name + ".compress_c", macs, rate);
    }
  }
  return out;
}

void VlifCell::visit_params(const std::string& prefix,
                            const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".attn.w1", attn_.w1);
  fn(prefix + ".attn.b1", attn_.b1);
  fn(prefix + ".attn.w2", attn_.w2);
  fn(prefix + ".attn.b2", attn_.b2);
  if (cfg_.compression == Compression::temporal) {
    fn(prefix + ".compress_t.w", ct_.w);
  } else {
    fn(prefix + ".compress_c.w1", cc_.w1);
    fn(prefix + ".compress_c.b1", cc_.b1);
    fn(prefix + ".compress_c.w2", cc_.w2);
    fn(prefix + ".compress_c.b2", cc_.b2);
  }
}

}  // namespace vlif
