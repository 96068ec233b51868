#pragma once

#include <map>
#include <string>
#include <vector>

#include "vlif/analysis.hpp"
#include "vlif/blocks.hpp"
#include "vlif/checkpoint.hpp"
#include "vlif/image.hpp"

namespace vlif {

struct NetworkConfig {
  int timesteps = 4;
  int base_channels = 16;
  int scales = 3;
  std::vector<int> channel_multipliers = {1, 2, 4};
  int r = 2;
  int refine_blocks = 4;
  NeuronConfig neuron;
  NeuronVariant vlif_variant = NeuronVariant::nilif;  // ablation: lif / ilif / nilif
  PatchOrder patch_order = PatchOrder::row_major;
  uint64_t seed = 0x5eedu;

  // Input extents must be divisible by 2^(scales-1) * r.
  void validate() const;
  void validate_input(int64_t h, int64_t w) const;
  int64_t min_divisor() const;
};

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 1;
  double learning_rate = 2e-3;
  std::string lr_schedule = "cosine";
  int patch_size = 32;
  std::string loss = "charbonnier";
  double charbonnier_eps = 1e-3;
  int log_interval = 50;

  void validate() const;
};

// Residual deraining U-Net.  Encoder: a multi-scale unit at the full
// resolution, then strided-conv downsample + SDEM per deeper scale.  Decoder
// mirrors with bilinear upsample, skip concatenation fused by 1x1 convs, and a
// multi-scale unit at the top.  A tail of stacked SDEMs refines; the head
// collapses time and predicts a residual subtracted from the input:
//   out = clamp(rainy - residual, 0, 1).
// The head starts at zero, so the untrained network is the identity.
class DerainNet {
 public:
  explicit DerainNet(const NetworkConfig& cfg);

  // rainy: [3,H,W] in [0,1].  Returns [T, base_channels, H, W].
  Tensor encode_input(const Tensor& rainy, ForwardCtx& ctx);
  // rainy: [3,H,W] in [0,1].  Returns [1,3,H,W] in [0,1].
  Tensor forward(const Tensor& rainy, ForwardCtx& ctx);
  // The pre-clamp residual of the last forward (detached diagnostic).
  const Tensor& last_residual() const { return last_residual_; }

  std::vector<Parameter> parameters();        // learnable tensors
  std::vector<Parameter> state();             // learnable + BN buffers
  void load_state(const Checkpoint& ck);      // strict: names and shapes must match

  const NetworkConfig& config() const { return cfg_; }
  // Swaps the quantized neuron inside every patch-time cell (ablations).
  void set_vlif_variant(NeuronVariant v);

 private:
  NetworkConfig cfg_;
  std::vector<int64_t> chans_;
  Tensor stem_k_, stem_b_;
  Tensor temb_;
  SmuParams enc_smu_, dec_smu_;
  std::vector<Tensor> down_k_, down_b_;
  std::vector<SdemParams> enc_sdem_;
  std::vector<Tensor> fuse_k_, fuse_b_;
  std::vector<SdemParams> dec_sdem_;
  std::vector<SdemParams> refine_;
  Tensor head_k_, head_b_;
  Tensor last_residual_;

  void visit(const ParamVisitor& fn, bool include_buffers);
};

// Adam with cosine learning-rate decay.
class Adam {
 public:
  Adam(std::vector<Parameter> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void zero_grad();
  void step();                      // uses the base learning rate
  void step_with_lr(double lr);     // explicit rate (schedules)
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Parameter> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

double cosine_lr(double base, int64_t step, int64_t total_steps);

struct TrainLogEntry {
  int iteration = 0;
  double loss = 0.0;
  double psnr_db = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double best_psnr = 0.0;
  int best_iteration = -1;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

// Deterministic under (cfg.seed, seed): batch sampling, crops and parameter
// init all derive from explicit streams. Writes metrics.jsonl plus best/last
// checkpoints under out_dir. Aborts (after dumping the offending batch) when
// the loss turns non-finite.
TrainResult train_derain(DerainNet& net, const std::vector<ImagePair>& data,
                         const TrainConfig& tc, const std::string& out_dir, uint64_t seed,
                         const std::string& manifest_json = "{}");

// One counted forward pass; empty-report warning flag when nothing ran.
EnergyReport profile_energy(DerainNet& net, const Tensor& rainy);

Checkpoint make_checkpoint(DerainNet& net, const std::string& manifest_json);

}  // namespace vlif
