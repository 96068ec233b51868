#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vlif/neurons.hpp"
#include "vlif/opcounter.hpp"
#include "vlif/rng.hpp"
#include "vlif/tensor.hpp"

namespace vlif {

enum class PatchOrder { row_major, column_major };
enum class Compression { temporal, channel };

struct VlifConfig {
  int r = 2;                     // spatial downsampling factor
  NeuronConfig neuron;           // quantized core (theta unused by the quantizer)
  Compression compression = Compression::temporal;
  PatchOrder patch_order = PatchOrder::row_major;
  NeuronVariant variant = NeuronVariant::nilif;  // ablation hook

  void validate() const;
};

// [T,C,H,W] -> [T*r^2, C, H/r, W/r]. Pixel-unshuffle by r, then the r^2
// intra-patch positions become consecutive pseudo-timesteps per original
// timestep; patch cell (i,j) maps to pseudo-step i*r + j (row_major).
// Exact bijection.
Tensor patch_to_time(const Tensor& x, const VlifConfig& cfg);
// Exact inverse of patch_to_time.
Tensor time_to_patch(const Tensor& x, const VlifConfig& cfg);

struct VlifIntegrateResult {
  Tensor spikes;  // quantized spike train, same shape as the input
  Tensor f_map;   // accumulated membrane per position: F(h,w) = sum_t U_t(h,w)
};

// Sequential quantized-neuron scan over all T*r^2 pseudo-timesteps with the
// membrane carried across steps, so intra-patch neighbours influence each
// other's firing.
VlifIntegrateResult vlif_integrate(const Tensor& x_pt, const VlifConfig& cfg,
                                   SpikeMode mode = SpikeMode::spiking);

// Squeeze-excitation gate over the pseudo-temporal axis: mean over (C,h,w),
// two-layer bottleneck (reduction 4), logistic gate, broadcast multiply.
struct TemporalAttentionParams {
  Tensor w1, b1, w2, b2;
  static TemporalAttentionParams init(int64_t steps, Rng& rng);
};
Tensor temporal_attention(const Tensor& spikes, const TemporalAttentionParams& p);

// Temporal compression: one learned r^2-tap kernel per output timestep,
// stride r^2 along the pseudo-temporal axis, shared across channels.
struct CompressTParams {
  Tensor w;  // [T_out, r^2]
  static CompressTParams init(int64_t t_out, int r, Rng& rng);
  static CompressTParams averaging(int64_t t_out, int r);  // all taps 1/r^2
};
Tensor vlif_compress_t(const Tensor& s_attn, int r, const CompressTParams& p);

// Channel compression: per output timestep the r^2 pseudo-steps are folded
// into the channel axis and a pointwise two-layer MLP (hidden width C) maps
// r^2*C channels back to C.
struct CompressCParams {
  Tensor w1, b1, w2, b2;  // 1x1 kernels [C, r^2*C, 1, 1] and [C, C, 1, 1]
  static CompressCParams init(int64_t channels, int r, Rng& rng);
};
Tensor vlif_compress_c(const Tensor& s_attn, int r, const CompressCParams& p);

// One VLIF site: owns the attention and compression weights.
// forward: patch_to_time -> integrate -> temporal attention -> compression.
// The temporal head leaves the output at the reduced resolution
// [T, C, H/r, W/r]; the channel head's caller upsamples when needed.
class VlifCell {
 public:
  VlifCell() = default;
  VlifCell(VlifConfig cfg, int64_t timesteps, int64_t channels, Rng& rng);

  Tensor forward(const Tensor& x, SpikeMode mode = SpikeMode::spiking,
                 OpCounter* counter = nullptr, const std::string& name = "vlif") const;

  // Diagnostic access to the last integrate outputs (detached copies).
  const Tensor& last_f_map() const { return last_f_map_; }
  const Tensor& last_spikes() const { return last_spikes_; }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor&)>& fn);

  const VlifConfig& config() const { return cfg_; }
  VlifConfig& config() { return cfg_; }

 private:
  VlifConfig cfg_;
  int64_t timesteps_ = 0;
  int64_t channels_ = 0;
  TemporalAttentionParams attn_;
  CompressTParams ct_;
  CompressCParams cc_;
  mutable Tensor last_f_map_;
  mutable Tensor last_spikes_;
};

}  // namespace vlif
