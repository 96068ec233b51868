#pragma once

#include <string>
#include <vector>

#include "vlif/image.hpp"
#include "vlif/neurons.hpp"
#include "vlif/opcounter.hpp"
#include "vlif/vlif.hpp"

namespace vlif {

// 2-D DFT magnitude of the channel-and-time mean map, zero-frequency
// centered. Spectral energy splits at a radial cutoff of min(H,W)/4; the
// split is Parseval-consistent: sum|x|^2 = (low + high) / (H*W).
struct SpectrumReport {
  int64_t h = 0, w = 0;
  std::vector<double> magnitude;  // h*w, centered
  double low_freq_energy = 0.0;
  double high_freq_energy = 0.0;
  double cutoff = 0.0;

  double total_energy() const { return low_freq_energy + high_freq_energy; }
  double low_fraction() const;
};
SpectrumReport spectrum(const Tensor& x);

enum class SaturationMode {
  reapply,   // f^t re-applies a fresh zero-state single-step threshold
  temporal,  // f^t is the spike at step t of one neuron fed x every step
};

struct SaturationEntry {
  int t = 0;
  double norm = 0.0;          // ||x (.) f^t(x)||_2
  double mu = 0.0;            // mean of |x (.) f^t(x)|
  double low_fraction = 0.0;  // low-frequency energy share of the masked map
};

struct SaturationReport {
  std::vector<SaturationEntry> per_t;
  double input_low_fraction = 0.0;
  bool exact_invariance = false;  // all norms bit-identical across t
};
SaturationReport saturation_experiment(const Tensor& x, int t_max, const NeuronConfig& cfg,
                                       SaturationMode mode = SaturationMode::reapply);

// Bright synthetic streaks on a smooth sub-threshold background; the standard
// probe for the saturation experiment's spectral claim.
Tensor make_streak_probe(int64_t h, int64_t w, uint64_t seed);

// M(i,i) = 0.9, M(i,j) = 0.9 * exp(-|i-j| / sigma): a symmetric field whose
// intensity decays away from the diagonal.
struct DecayMatrix {
  int64_t n = 0;
  double sigma = 2.0;
  Tensor values;  // [1, 1, n, n]
};
DecayMatrix make_decay_matrix(int64_t n, double sigma = 2.0);

struct ActivationBucket {
  double lo = 0.0, hi = 0.0;
  int64_t population = 0;
  double lif_rate = 0.0;
  double vlif_rate = 0.0;
};

struct ActivationReport {
  double lif_fraction = 0.0;   // nonzero outputs of single-step binary LIF
  double vlif_fraction = 0.0;  // nonzero outputs of the quantized patch-time scan
  double ratio = 0.0;          // vlif/lif; +inf when the LIF fraction is zero
  std::vector<ActivationBucket> buckets;  // per input-intensity bucket
  ActivationBucket lowest;                // the [0.002, 0.114] bucket
};
ActivationReport decay_matrix_experiment(int64_t n, const NeuronConfig& lif_cfg,
                                         const VlifConfig& vlif_cfg, double sigma = 2.0);

// Energy model: 12.5 pJ per FLOP (1 MAC = 2 FLOPs) for dense layers,
// 77 fJ per synaptic op (SOP = firing_rate * MACs) for spike-driven layers,
// 3.7 pJ per threshold/quantize evaluation.
struct EnergyLayer {
  LayerCount count;
  double sops = 0.0;
  double energy_pj = 0.0;
};

struct EnergyReport {
  std::vector<EnergyLayer> layers;
  double total_pj = 0.0;
  double total_uj = 0.0;
  bool empty = false;  // profiling saw no counted layers

  static constexpr double flop_pj = 12.5;
  static constexpr double sop_fj = 77.0;
  static constexpr double sign_pj = 3.7;
};
EnergyReport energy_from_counter(const OpCounter& counter);

std::string energy_report_text(const EnergyReport& rep);

// 10*log10(peak^2 / MSE); identical images report +infinity.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1, mean over valid windows; RGB is reduced by channel mean.
double ssim(const Image& a, const Image& b);

// 8-bit PGM heatmap of a spectrum (log-scaled magnitude).
void save_spectrum_pgm(const std::string& path, const SpectrumReport& rep);

}  // namespace vlif
