#pragma once

#include <functional>
#include <string>

#include "vlif/opcounter.hpp"
#include "vlif/vlif.hpp"

namespace vlif {

// Options threaded through every block forward.
struct ForwardCtx {
  bool training = false;
  SpikeMode mode = SpikeMode::spiking;
  OpCounter* counter = nullptr;
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

// Two-layer bottleneck (reduction 4) over a pooled vector; logistic output.
struct GateParams {
  Tensor w1, b1, w2, b2;
  static GateParams init(int64_t len, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};
// row: [1, L] pooled means; returns [1, L] gate values in (0, 1).
Tensor se_gate(const Tensor& row, const GateParams& p);

// Spatial gate: 3x3 conv bottleneck (1 -> 4 -> 1 channels) over the map pooled
// across time and channels; size-agnostic.
struct SpatialGateParams {
  Tensor k1, b1, k2, b2;
  static SpatialGateParams init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Multi-dimensional attention: sequential temporal, channel and spatial
// squeeze-excitation gates. Shape-preserving; all gate values in (0, 1).
struct MdaParams {
  GateParams temporal, channel;
  SpatialGateParams spatial;
  static MdaParams init(int64_t timesteps, int64_t channels, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};
Tensor mda(const Tensor& x, const MdaParams& p, ForwardCtx& ctx, const std::string& name = "mda");

struct BnParams {
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // buffers, updated in training mode
  double eps = 1e-5;
  double momentum = 0.1;
  static BnParams init(int64_t channels);
  void visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers);
};
Tensor bn(const Tensor& x, BnParams& p, bool training);

enum class SdemStageKind { lif, vlif_c };

// One decomposition stage:
//   X_h = alpha * indicator(X)        indicator: binary spikes (lif stage) or
//                                     upsampled channel-compressed output (vlif_c stage)
//   X_l  = X - X_h
//   X_h' = X_h (.) X,  X_l' = beta2 * X_l
//   refined  = BN(Conv(X_h' + X_l' + X))
//   shortcut = BN(Conv(X))
//   refined' = refined + shortcut
struct SdemStageParams {
  SdemStageKind kind = SdemStageKind::lif;
  Tensor alpha, beta2;  // learnable scalars, both start at 1
  Tensor conv_main, conv_shortcut;
  BnParams bn_main, bn_shortcut;
  NeuronConfig neuron;  // stage-1 binary neuron
  VlifCell vlif;        // stage-2 cell (channel compression)
  static SdemStageParams init(SdemStageKind kind, int64_t timesteps, int64_t channels,
                              const NeuronConfig& neuron, const VlifConfig& vlif_cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers);
};

struct SdemStageOut {
  Tensor refined_prime;
  Tensor refined;
  Tensor shortcut;
  Tensor indicator;  // pre-alpha indicator, for stage-typing checks
  Tensor x_h, x_l;   // the decomposition halves; x_l is exactly x - x_h
};
SdemStageOut sdem_stage(const Tensor& x, SdemStageParams& p, ForwardCtx& ctx,
                        const std::string& name = "sdem_stage");

// Two cascaded stages (binary then context-aware), then attention fusion:
//   out = refined'_2 + shortcut_2 + MDA(refined_2)
struct SdemParams {
  SdemStageParams s1, s2;
  MdaParams att;
  static SdemParams init(int64_t timesteps, int64_t channels, const NeuronConfig& neuron,
                         const VlifConfig& vlif_cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers);
};
Tensor sdem_forward(const Tensor& x, SdemParams& p, ForwardCtx& ctx,
                    const std::string& name = "sdem");

// Spiking unit: LIF -> BN -> Conv -> MDA, shape-preserving.
struct SuParams {
  NeuronConfig neuron;
  BnParams bn;
  Tensor conv;
  MdaParams att;
  static SuParams init(int64_t timesteps, int64_t channels, const NeuronConfig& neuron, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers);
};
Tensor spiking_unit(const Tensor& x, SuParams& p, ForwardCtx& ctx,
                    const std::string& name = "su");

// Multi-scale unit: SDEM -> temporal-compression VLIF (downsamples to
// H/r x W/r) -> SU -> SU -> bilinear upsample -> +x -> MDA.
struct SmuParams {
  SdemParams sdem;
  VlifCell vlif_t;
  SuParams su1, su2;
  MdaParams att;
  static SmuParams init(int64_t timesteps, int64_t channels, const NeuronConfig& neuron,
                        const VlifConfig& vlif_cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn, bool include_buffers);
};
Tensor smu_forward(const Tensor& x, SmuParams& p, ForwardCtx& ctx,
                   const std::string& name = "smu");
// The inner path without the residual add and final attention; exposed so the
// wiring y = MDA(inner(x) + x) is directly testable.
Tensor smu_inner(const Tensor& x, SmuParams& p, ForwardCtx& ctx,
                 const std::string& name = "smu");

// x[t,c,:,:] + table[t,c]; a zero table is the identity.
Tensor temporal_embedding(const Tensor& x, const Tensor& table);

}  // namespace vlif
