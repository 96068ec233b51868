#include "vlif/neurons.hpp"

#include <cmath>

#include "vlif/ops.hpp"

namespace vlif {

void NeuronConfig::validate() const {
  if (!(theta > 0.0)) throw ValueError("neuron: theta must be positive");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValueError("neuron: beta must lie in [0, 1]");
  if (d_max < 1) throw ValueError("neuron: d_max must be >= 1");
  if (!(surrogate_width > 0.0)) throw ValueError("neuron: surrogate_width must be positive");
}

Tensor lif_spike_fn(const Tensor& u, double theta, double width, SpikeMode mode) {
  std::vector<double> out(u.data());
  if (mode == SpikeMode::spiking) {
    for (double& v : out) v = v >= theta ? 1.0 : 0.0;
  } else {
    const double inv2w = 1.0 / (2.0 * width);
    for (double& v : out) {
      double s = (v - theta) * inv2w + 0.5;
      v = s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
    }
  }
  return make_node(u.shape(), std::move(out), {u},
                   [theta, width](detail::Node& self) {
                     const auto& ud = self.inputs[0]->data;
                     auto& g = self.inputs[0]->grad_buf();
                     const double inv2w = 1.0 / (2.0 * width);
                     for (size_t i = 0; i < g.size(); ++i)
                       if (std::abs(ud[i] - theta) < width) g[i] += inv2w * self.grad[i];
                   },
                   "lif_spike");
}

Tensor quantize_clip_fn(const Tensor& u, int d, bool normalize, SpikeMode mode) {
  if (d < 1) throw ValueError("quantize_clip: d must be >= 1");
  const double dd = static_cast<double>(d);
  const double scale = normalize ? 1.0 / dd : 1.0;
  std::vector<double> out(u.data());
  if (mode == SpikeMode::spiking) {
    for (double& v : out) {
      double q = std::round(v);
      q = q < 0.0 ? 0.0 : (q > dd ? dd : q);
      v = q * scale;
    }
  } else {
    for (double& v : out) {
      double q = v < 0.0 ? 0.0 : (v > dd ? dd : v);
      v = q * scale;
    }
  }
  return make_node(u.shape(), std::move(out), {u},
                   [dd, scale](detail::Node& self) {
                     const auto& ud = self.inputs[0]->data;
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i)
                       if (ud[i] >= 0.0 && ud[i] <= dd) g[i] += scale * self.grad[i];
                   },
                   "quantize_clip");
}

static void check_state(const Tensor& x_t, const NeuronState& state) {
  if (x_t.shape() != state.h.shape())
    throw DimensionError("neuron step: input " + shape_str(x_t.shape()) + " vs state " +
                         shape_str(state.h.shape()));
}

StepResult lif_step(const Tensor& x_t, const NeuronState& state, const NeuronConfig& cfg,
                    SpikeMode mode) {
  cfg.validate();
  check_state(x_t, state);
  Tensor u = add(state.h, x_t);
  Tensor s = lif_spike_fn(u, cfg.theta, cfg.surrogate_width, mode);
  Tensor h_next;
  if (cfg.reset == ResetMode::subtract) {
    h_next = mul_scalar(sub(u, mul_scalar(s, cfg.theta)), cfg.beta);
  } else {
    h_next = mul_scalar(mul(u, add_scalar(mul_scalar(s, -1.0), 1.0)), cfg.beta);
  }
  return {s, NeuronState{h_next}, u};
}

StepResult nilif_step(const Tensor& x_t, const NeuronState& state, const NeuronConfig& cfg,
                      SpikeMode mode) {
  cfg.validate();
  check_state(x_t, state);
  Tensor u = add(state.h, x_t);
  Tensor s = quantize_clip_fn(u, cfg.d_max, /*normalize=*/true, mode);
  Tensor h_next = mul_scalar(sub(u, mul_scalar(s, static_cast<double>(cfg.d_max))), cfg.beta);
  return {s, NeuronState{h_next}, u};
}

StepResult ilif_step(const Tensor& x_t, const NeuronState& state, const NeuronConfig& cfg,
                     SpikeMode mode) {
  cfg.validate();
  check_state(x_t, state);
  Tensor u = add(state.h, x_t);
  Tensor s = quantize_clip_fn(u, cfg.d_max, /*normalize=*/false, mode);
  Tensor h_next = mul_scalar(sub(u, s), cfg.beta);
  return {s, NeuronState{h_next}, u};
}

StepResult neuron_step(NeuronVariant variant, const Tensor& x_t, const NeuronState& state,
                       const NeuronConfig& cfg, SpikeMode mode) {
  switch (variant) {
    case NeuronVariant::lif:
      return lif_step(x_t, state, cfg, mode);
    case NeuronVariant::nilif:
      return nilif_step(x_t, state, cfg, mode);
    case NeuronVariant::ilif:
      return ilif_step(x_t, state, cfg, mode);
  }
  throw ContractError("unknown neuron variant");
}

Tensor surrogate_grad(const Tensor& u, const NeuronConfig& cfg) {
  cfg.validate();
  const double inv2w = 1.0 / (2.0 * cfg.surrogate_width);
  std::vector<double> out(u.data());
  for (double& v : out) v = std::abs(v - cfg.theta) < cfg.surrogate_width ? inv2w : 0.0;
  return Tensor::from_data(u.shape(), std::move(out));
}

double hf_indicator_norm(const Tensor& x, int t_applications, const NeuronConfig& cfg) {
  cfg.validate();
  if (t_applications < 1) throw ContractError("hf_indicator_norm: t_applications must be >= 1");
  // Each application is a fresh zero-state single-step threshold: f(y) = 1[y >= theta].
  std::vector<double> m(x.data());
  for (int t = 0; t < t_applications; ++t)
    for (double& v : m) v = v >= cfg.theta ? 1.0 : 0.0;
  const auto& xd = x.data();
  double acc = 0.0;
  for (size_t i = 0; i < m.size(); ++i) {
    const double v = xd[i] * m[i];
    acc += v * v;
  }
  return std::sqrt(acc);
}

// The scan is fused into one graph node: the whole sequence runs as tight
// loops and the backward pass replays the recurrence adjoint directly instead
// of stepping through per-timestep nodes. Gradients are identical to the
// composed per-step form (the membrane buffer is saved for the surrogate).
// The returned final state is a plain value; gradients flow through the
// spike train.
ScanResult neuron_scan(const Tensor& x, const NeuronConfig& cfg, NeuronVariant variant,
                       SpikeMode mode) {
  if (x.rank() < 2) throw DimensionError("neuron_scan: rank >= 2 required");
  cfg.validate();
  const int64_t steps = x.size(0);
  Shape feat(x.shape().begin() + 1, x.shape().end());
  const int64_t chunk = shape_numel(feat);
  const auto& xd = x.data();

  const double theta = cfg.theta, beta = cfg.beta, width = cfg.surrogate_width;
  const double dd = static_cast<double>(cfg.d_max);
  const bool zero_reset = cfg.reset == ResetMode::zero && variant == NeuronVariant::lif;
  const bool relaxed = mode == SpikeMode::relaxed;
  const double inv2w = 1.0 / (2.0 * width);

  std::vector<double> u_all(xd.size());
  std::vector<double> s_all(xd.size());
  std::vector<double> h(static_cast<size_t>(chunk), 0.0);
  std::vector<double> f_acc(static_cast<size_t>(chunk), 0.0);
  for (int64_t t = 0; t < steps; ++t) {
    const double* xt = xd.data() + t * chunk;
    double* ut = u_all.data() + t * chunk;
    double* st = s_all.data() + t * chunk;
    for (int64_t i = 0; i < chunk; ++i) {
      const double u = h[static_cast<size_t>(i)] + xt[i];
      ut[i] = u;
      f_acc[static_cast<size_t>(i)] += u;
      double s;
      switch (variant) {
        case NeuronVariant::lif:
          s = relaxed ? std::min(std::max((u - theta) * inv2w + 0.5, 0.0), 1.0)
                      : (u >= theta ? 1.0 : 0.0);
          h[static_cast<size_t>(i)] =
              zero_reset ? beta * u * (1.0 - s) : beta * (u - s * theta);
          break;
        case NeuronVariant::nilif: {
          const double q = std::min(std::max(relaxed ? u : std::round(u), 0.0), dd);
          s = q / dd;
          h[static_cast<size_t>(i)] = beta * (u - q);
          break;
        }
        case NeuronVariant::ilif: {
          const double q = std::min(std::max(relaxed ? u : std::round(u), 0.0), dd);
          s = q;
          h[static_cast<size_t>(i)] = beta * (u - q);
          break;
        }
        default:
          throw ContractError("unknown neuron variant");
      }
      st[i] = s;
    }
  }

  Tensor spikes = make_node(
      x.shape(), std::move(s_all), {x},
      [steps, chunk, theta, beta, dd, width, inv2w, zero_reset, variant,
       u_all = std::move(u_all)](detail::Node& self) {
        auto& gx = self.inputs[0]->grad_buf();
        const std::vector<double>& sv = self.data;
        std::vector<double> gh(static_cast<size_t>(chunk), 0.0);
        for (int64_t t = steps - 1; t >= 0; --t) {
          const double* ut = u_all.data() + t * chunk;
          const double* st = sv.data() + t * chunk;
          const double* gs = self.grad.data() + t * chunk;
          double* gxt = gx.data() + t * chunk;
          for (int64_t i = 0; i < chunk; ++i) {
            const double u = ut[i];
            double fprime, dh_du;
            switch (variant) {
              case NeuronVariant::lif:
                fprime = std::abs(u - theta) < width ? inv2w : 0.0;
                dh_du = zero_reset ? beta * (1.0 - st[i] - u * fprime)
                                   : beta * (1.0 - theta * fprime);
                break;
              case NeuronVariant::nilif:
                fprime = (u >= 0.0 && u <= dd) ? 1.0 / dd : 0.0;
                dh_du = beta * (1.0 - dd * fprime);
                break;
              default:  // ilif
                fprime = (u >= 0.0 && u <= dd) ? 1.0 : 0.0;
                dh_du = beta * (1.0 - fprime);
                break;
            }
            const double du = gs[i] * fprime + gh[static_cast<size_t>(i)] * dh_du;
            gxt[i] += du;
            gh[static_cast<size_t>(i)] = du;
          }
        }
      },
      "neuron_scan");

  return {spikes, Tensor::from_data(feat, std::move(f_acc)),
          NeuronState{Tensor::from_data(feat, std::move(h))}};
}

double nonzero_fraction(const Tensor& t) {
  if (t.numel() == 0) return 0.0;
  int64_t nz = 0;
  for (double v : t.data())
    if (v != 0.0) ++nz;
  return static_cast<double>(nz) / static_cast<double>(t.numel());
}

}  // namespace vlif
