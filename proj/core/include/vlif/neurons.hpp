#pragma once

#include "vlif/tensor.hpp"

namespace vlif {

enum class ResetMode { subtract, zero };

// Forward semantics of the spike nonlinearities.
//  spiking: the real discrete dynamics (binary / quantized outputs).
//  relaxed: a continuous piecewise-linear stand-in whose exact derivative
//           equals the surrogate backward, so composite graphs can be
//           validated against finite differences.
// The backward implementation is shared: it is always the surrogate.
enum class SpikeMode { spiking, relaxed };

enum class NeuronVariant { lif, nilif, ilif };

struct NeuronConfig {
  double theta = 1.0;          // firing threshold
  double beta = 0.5;           // leak factor in [0, 1]
  int d_max = 4;               // quantization ceiling D
  ResetMode reset = ResetMode::subtract;
  double surrogate_width = 1.0;

  void validate() const;
};

// Membrane memory carried between timesteps; zeros at sequence start.
struct NeuronState {
  Tensor h;

  static NeuronState zeros(const Shape& feature_shape) {
    return NeuronState{Tensor::zeros(feature_shape)};
  }
};

struct StepResult {
  Tensor spikes;
  NeuronState state;
  Tensor membrane;  // U = H + x, before reset (diagnostic / conservation checks)
};

// Binary threshold: 1 where U >= theta. Backward is the rectangular
// surrogate 1/(2w) on |U - theta| < w. Relaxed forward is the matching
// hard-sigmoid clip((U - theta)/(2w) + 1/2, 0, 1).
Tensor lif_spike_fn(const Tensor& u, double theta, double width, SpikeMode mode);

// Quantizer clip(round(U), 0, D), divided by D when `normalize`. Backward is
// a straight-through estimator: 1 (scaled by 1/D when normalized) inside
// [0, D], zero outside. Relaxed forward drops the rounding.
Tensor quantize_clip_fn(const Tensor& u, int d, bool normalize, SpikeMode mode);

// One timestep of each neuron:
//   U = H + x
//   lif:    S = 1[U >= theta];            H' = beta*(U - S*theta)  (subtract)
//                                         H' = beta*U*(1 - S)      (zero reset)
//   nilif:  S = clip(round(U), 0, D)/D;   H' = beta*(U - S*D)
//   ilif:   S = clip(round(U), 0, D);     H' = beta*(U - S)
StepResult lif_step(const Tensor& x_t, const NeuronState& state, const NeuronConfig& cfg,
                    SpikeMode mode = SpikeMode::spiking);
StepResult nilif_step(const Tensor& x_t, const NeuronState& state, const NeuronConfig& cfg,
                      SpikeMode mode = SpikeMode::spiking);
StepResult ilif_step(const Tensor& x_t, const NeuronState& state, const NeuronConfig& cfg,
                     SpikeMode mode = SpikeMode::spiking);

StepResult neuron_step(NeuronVariant variant, const Tensor& x_t, const NeuronState& state,
                       const NeuronConfig& cfg, SpikeMode mode = SpikeMode::spiking);

// Rectangular surrogate window values: 1/(2w) where |U - theta| < w, else 0.
// Pure evaluation, no graph.
Tensor surrogate_grad(const Tensor& u, const NeuronConfig& cfg);

// L2 norm of x (.) f^t(x), where f is the zero-state single-step binary LIF
// map applied t times. For theta in (0, 1] the mask is idempotent, so the
// value is constant in t.
double hf_indicator_norm(const Tensor& x, int t_applications, const NeuronConfig& cfg);

struct ScanResult {
  Tensor spikes;     // [S, ...] stacked over the leading (time) axis
  Tensor f_map;      // per-position sum of membrane potentials over all steps
  NeuronState final_state;
};

// Sequential scan over the leading axis of x with carried membrane state.
ScanResult neuron_scan(const Tensor& x, const NeuronConfig& cfg, NeuronVariant variant,
                       SpikeMode mode = SpikeMode::spiking);

// Fraction of nonzero values; the measured firing rate of a spike tensor.
double nonzero_fraction(const Tensor& t);

}  // namespace vlif
