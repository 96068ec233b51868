#include "vlif/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

#include "vlif/ops.hpp"

namespace vlif {

double SpectrumReport::low_fraction() const {
  const double tot = total_energy();
  return tot > 0.0 ? low_freq_energy / tot : 0.0;
}

namespace {

// Mean over all leading axes, keeping the trailing two.
std::vector<double> mean_map(const Tensor& x, int64_t& h, int64_t& w) {
  if (x.rank() < 2) throw DimensionError("spectrum: rank >= 2 required");
  h = x.size(x.rank() - 2);
  w = x.size(x.rank() - 1);
  if (h < 2 || w < 2) throw DimensionError("spectrum: spatial extents must be >= 2");
  const int64_t lead = x.numel() / (h * w);
  std::vector<double> m(static_cast<size_t>(h * w), 0.0);
  const auto& d = x.data();
  for (int64_t l = 0; l < lead; ++l)
    for (int64_t i = 0; i < h * w; ++i) m[static_cast<size_t>(i)] += d[static_cast<size_t>(l * h * w + i)];
  const double inv = 1.0 / static_cast<double>(lead);
  for (double& v : m) v *= inv;
  return m;
}

// Naive length-agnostic 1-D DFT along rows of a [rows, n] complex buffer.
void dft_rows(std::vector<std::complex<double>>& buf, int64_t rows, int64_t n) {
  std::vector<std::complex<double>> twiddle(static_cast<size_t>(n));
  const double step = -2.0 * 3.14159265358979323846 / static_cast<double>(n);
  for (int64_t k = 0; k < n; ++k)
    twiddle[static_cast<size_t>(k)] = {std::cos(step * static_cast<double>(k)),
                                       std::sin(step * static_cast<double>(k))};
  std::vector<std::complex<double>> row(static_cast<size_t>(n));
  for (int64_t r = 0; r < rows; ++r) {
    std::complex<double>* p = buf.data() + r * n;
    for (int64_t k = 0; k < n; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (int64_t j = 0; j < n; ++j) acc += p[j] * twiddle[static_cast<size_t>((j * k) % n)];
      row[static_cast<size_t>(k)] = acc;
    }
    std::copy(row.begin(), row.end(), p);
  }
}

}  // namespace

SpectrumReport spectrum(const Tensor& x) {
  int64_t h = 0, w = 0;
  std::vector<double> m = mean_map(x, h, w);

  std::vector<std::complex<double>> buf(m.size());
  for (size_t i = 0; i < m.size(); ++i) buf[i] = {m[i], 0.0};
  dft_rows(buf, h, w);  // transform rows
  // Transpose, transform the other axis, transpose back.
  std::vector<std::complex<double>> tr(buf.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xx = 0; xx < w; ++xx) tr[static_cast<size_t>(xx * h + y)] = buf[static_cast<size_t>(y * w + xx)];
  dft_rows(tr, w, h);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xx = 0; xx < w; ++xx) buf[static_cast<size_t>(y * w + xx)] = tr[static_cast<size_t>(xx * h + y)];

  SpectrumReport rep;
  rep.h = h;
  rep.w = w;
  rep.cutoff = static_cast<double>(std::min(h, w)) / 4.0;
  rep.magnitude.assign(m.size(), 0.0);
  for (int64_t ky = 0; ky < h; ++ky)
    for (int64_t kx = 0; kx < w; ++kx) {
      const std::complex<double> v = buf[static_cast<size_t>(ky * w + kx)];
      const double e = std::norm(v);
      // Centered coordinates; frequency ky maps to ky - h for ky > h/2.
      const double fy = ky <= h / 2 ? static_cast<double>(ky) : static_cast<double>(ky - h);
      const double fx = kx <= w / 2 ? static_cast<double>(kx) : static_cast<double>(kx - w);
      const double radius = std::sqrt(fy * fy + fx * fx);
      if (radius < rep.cutoff)
        rep.low_freq_energy += e;
      else
        rep.high_freq_energy += e;
      const int64_t cy = (ky + h / 2) % h;
      const int64_t cx = (kx + w / 2) % w;
      rep.magnitude[static_cast<size_t>(cy * w + cx)] = std::abs(v);
    }
  return rep;
}

namespace {

std::vector<double> apply_mask_t(const Tensor& x, int t, const NeuronConfig& cfg,
                                 SaturationMode mode) {
  const auto& xd = x.data();
  std::vector<double> mask(xd.size());
  if (mode == SaturationMode::reapply) {
    std::copy(xd.begin(), xd.end(), mask.begin());
    for (int k = 0; k < t; ++k)
      for (double& v : mask) v = v >= cfg.theta ? 1.0 : 0.0;
  } else {
    // One neuron driven with x for t steps; the mask is the step-t spike map.
    std::vector<double> hstate(xd.size(), 0.0);
    for (int k = 0; k < t; ++k)
      for (size_t i = 0; i < xd.size(); ++i) {
        const double u = hstate[i] + xd[i];
        const double s = u >= cfg.theta ? 1.0 : 0.0;
        hstate[i] = cfg.reset == ResetMode::subtract ? cfg.beta * (u - s * cfg.theta)
                                                     : cfg.beta * u * (1.0 - s);
        mask[i] = s;
      }
  }
  return mask;
}

}  // namespace

SaturationReport saturation_experiment(const Tensor& x, int t_max, const NeuronConfig& cfg,
                                       SaturationMode mode) {
  cfg.validate();
  if (t_max < 2) throw ContractError("saturation_experiment: t_max must be >= 2");
  SaturationReport rep;
  rep.input_low_fraction = spectrum(x).low_fraction();
  const auto& xd = x.data();
  for (int t = 1; t <= t_max; ++t) {
    std::vector<double> mask = apply_mask_t(x, t, cfg, mode);
    std::vector<double> masked(xd.size());
    double sq = 0.0, abssum = 0.0;
    for (size_t i = 0; i < xd.size(); ++i) {
      masked[i] = xd[i] * mask[i];
      sq += masked[i] * masked[i];
      abssum += std::abs(masked[i]);
    }
    SaturationEntry e;
    e.t = t;
    e.norm = std::sqrt(sq);
    e.mu = abssum / static_cast<double>(xd.size());
    e.low_fraction = spectrum(Tensor::from_data(x.shape(), std::move(masked))).low_fraction();
    rep.per_t.push_back(e);
  }
  rep.exact_invariance = true;
  for (const auto& e : rep.per_t)
    if (e.norm != rep.per_t.front().norm) rep.exact_invariance = false;
  return rep;
}

Tensor make_streak_probe(int64_t h, int64_t w, uint64_t seed) {
  // Smooth sub-threshold background with a few bright thin streaks.
  Rng rng(seed);
  Tensor t = Tensor::zeros({1, 1, h, w});
  auto& d = t.mut_data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(h);
      const double fx = static_cast<double>(x) / static_cast<double>(w);
      d[static_cast<size_t>(y * w + x)] =
          0.45 + 0.25 * std::sin(6.283185307179586 * fy) * std::cos(6.283185307179586 * fx);
    }
  RainSpec spec;
  spec.streak_count = static_cast<int>(std::max<int64_t>(4, (h * w) / 256));
  spec.length_px = static_cast<double>(h) / 2.0;
  spec.intensity = 1.0;
  spec.gaussian_blur_sigma = 0.0;
  spec.seed = seed;
  Image streaks = render_rain_layer(h, w, spec);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (streaks.at(y, x, 0) > 0.0)
        d[static_cast<size_t>(y * w + x)] = 1.2 + 0.4 * streaks.at(y, x, 0);
  return t;
}

DecayMatrix make_decay_matrix(int64_t n, double sigma) {
  if (n < 1) throw ValueError("decay matrix: n must be >= 1");
  if (!(sigma > 0.0)) throw ValueError("decay matrix: sigma must be positive");
  DecayMatrix m;
  m.n = n;
  m.sigma = sigma;
  m.values = Tensor::zeros({1, 1, n, n});
  auto& d = m.values.mut_data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      d[static_cast<size_t>(i * n + j)] =
          0.9 * std::exp(-static_cast<double>(std::abs(i - j)) / sigma);
  return m;
}

ActivationReport decay_matrix_experiment(int64_t n, const NeuronConfig& lif_cfg,
                                         const VlifConfig& vlif_cfg, double sigma) {
  lif_cfg.validate();
  vlif_cfg.validate();
  if (n % vlif_cfg.r != 0) throw ValueError("decay_matrix_experiment: n must be divisible by r");
  DecayMatrix dm = make_decay_matrix(n, sigma);

  // Single-step binary LIF from the zero state.
  StepResult lif = lif_step(dm.values, NeuronState::zeros(dm.values.shape()), lif_cfg);
  // Quantized scan over the patch-time reorganisation.
  Tensor pt = patch_to_time(dm.values, vlif_cfg);
  VlifIntegrateResult vl = vlif_integrate(pt, vlif_cfg);

  ActivationReport rep;
  rep.lif_fraction = nonzero_fraction(lif.spikes);
  rep.vlif_fraction = nonzero_fraction(vl.spikes);
  rep.ratio = rep.lif_fraction > 0.0 ? rep.vlif_fraction / rep.lif_fraction
                                     : std::numeric_limits<double>::infinity();

  // Intensity buckets: eight 0.112-wide bins starting from the paper-style
  // lowest range [0.002, 0.114]; the last bin absorbs the 0.9 diagonal.
  const double lo0 = 0.002, width = 0.112;
  std::vector<ActivationBucket> buckets(8);
  for (int b = 0; b < 8; ++b) {
    buckets[static_cast<size_t>(b)].lo = lo0 + width * b;
    buckets[static_cast<size_t>(b)].hi = b == 7 ? 0.9000000001 : lo0 + width * (b + 1);
  }
  std::vector<int64_t> lif_fired(8, 0), vlif_fired(8, 0), pop(8, 0);

  const auto& vals = dm.values.data();
  const auto& lif_s = lif.spikes.data();
  const auto& vlif_s = vl.spikes.data();
  const int r = vlif_cfg.r;
  const int64_t hh = n / r, ww = n / r;
  const bool row_major = vlif_cfg.patch_order == PatchOrder::row_major;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      const double v = vals[static_cast<size_t>(i * n + j)];
      int bucket = -1;
      for (int b = 0; b < 8; ++b)
        if (v >= buckets[static_cast<size_t>(b)].lo && v < buckets[static_cast<size_t>(b)].hi) {
          bucket = b;
          break;
        }
      if (bucket < 0) continue;
      ++pop[static_cast<size_t>(bucket)];
      if (lif_s[static_cast<size_t>(i * n + j)] != 0.0) ++lif_fired[static_cast<size_t>(bucket)];
      // The pseudo-step output cell that carries input position (i, j).
      const int64_t pi = i % r, pj = j % r;
      const int64_t p = row_major ? pi * r + pj : pj * r + pi;
      const int64_t y = i / r, x = j / r;
      if (vlif_s[static_cast<size_t>((p * hh + y) * ww + x)] != 0.0)
        ++vlif_fired[static_cast<size_t>(bucket)];
    }
  for (int b = 0; b < 8; ++b) {
    auto& bk = buckets[static_cast<size_t>(b)];
    bk.population = pop[static_cast<size_t>(b)];
    if (bk.population > 0) {
      bk.lif_rate = static_cast<double>(lif_fired[static_cast<size_t>(b)]) / static_cast<double>(bk.population);
      bk.vlif_rate = static_cast<double>(vlif_fired[static_cast<size_t>(b)]) / static_cast<double>(bk.population);
    }
  }
  rep.lowest = buckets.front();
  rep.buckets = std::move(buckets);
  return rep;
}

EnergyReport energy_from_counter(const OpCounter& counter) {
  EnergyReport rep;
  rep.empty = counter.layers.empty();
  for (const LayerCount& lc : counter.layers) {
    EnergyLayer el;
    el.count = lc;
    if (lc.spike_driven) {
      el.sops = lc.firing_rate * lc.mac_count;
      el.energy_pj = el.sops * (EnergyReport::sop_fj * 1e-3);
    } else {
      el.energy_pj = lc.mac_count * 2.0 * EnergyReport::flop_pj;
    }
    el.energy_pj += lc.sign_ops * EnergyReport::sign_pj;
    rep.total_pj += el.energy_pj;
    rep.layers.push_back(el);
  }
  rep.total_uj = rep.total_pj * 1e-6;
  return rep;
}

std::string energy_report_text(const EnergyReport& rep) {
  std::ostringstream os;
  os << "layer                                    macs        mode   rate    sign_ops    energy\n";
  char line[256];
  for (const EnergyLayer& el : rep.layers) {
    std::snprintf(line, sizeof(line), "%-38s %-11.4g %-6s %-6.3f %-11.4g %.6g pJ\n",
                  el.count.layer.c_str(), el.count.mac_count,
                  el.count.spike_driven ? "spike" : "dense", el.count.firing_rate,
                  el.count.sign_ops, el.energy_pj);
    os << line;
  }
  std::snprintf(line, sizeof(line), "total: %.6g pJ (%.6g uJ)\n", rep.total_pj, rep.total_uj);
  os << line;
  return os.str();
}

double psnr(const Image& a, const Image& b, double peak) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) throw DimensionError("psnr: image shape mismatch");
  if (!(peak > 0.0)) throw ValueError("psnr: peak must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    const double d = a.px[i] - b.px[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.px.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(static_cast<size_t>(img.h * img.w));
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int64_t ch = 0; ch < img.c; ++ch) acc += img.at(y, x, ch);
      g[static_cast<size_t>(y * img.w + x)] = acc / static_cast<double>(img.c);
    }
  return g;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) throw DimensionError("ssim: image shape mismatch");
  constexpr int64_t win = 11;
  constexpr double sigma = 1.5, k1 = 0.01, k2 = 0.03, dyn = 1.0;
  if (a.h < win || a.w < win) throw DimensionError("ssim: image smaller than the 11x11 window");

  double kernel[win][win];
  double ksum = 0.0;
  for (int64_t i = 0; i < win; ++i)
    for (int64_t j = 0; j < win; ++j) {
      const double dy = static_cast<double>(i - win / 2), dx = static_cast<double>(j - win / 2);
      kernel[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      ksum += kernel[i][j];
    }
  for (int64_t i = 0; i < win; ++i)
    for (int64_t j = 0; j < win; ++j) kernel[i][j] /= ksum;

  const std::vector<double> ga = to_gray(a), gb = to_gray(b);
  const double c1 = (k1 * dyn) * (k1 * dyn), c2 = (k2 * dyn) * (k2 * dyn);
  const int64_t w = a.w;
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t y = 0; y + win <= a.h; ++y)
    for (int64_t x = 0; x + win <= a.w; ++x) {
      double ma = 0.0, mb = 0.0;
      for (int64_t i = 0; i < win; ++i)
        for (int64_t j = 0; j < win; ++j) {
          ma += kernel[i][j] * ga[static_cast<size_t>((y + i) * w + x + j)];
          mb += kernel[i][j] * gb[static_cast<size_t>((y + i) * w + x + j)];
        }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int64_t i = 0; i < win; ++i)
        for (int64_t j = 0; j < win; ++j) {
          const double da = ga[static_cast<size_t>((y + i) * w + x + j)] - ma;
          const double db = gb[static_cast<size_t>((y + i) * w + x + j)] - mb;
          va += kernel[i][j] * (da * da);
          vb += kernel[i][j] * (db * db);
          // da*db first: the window statistic stays bit-symmetric in (a, b).
          cov += kernel[i][j] * (da * db);
        }
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

void save_spectrum_pgm(const std::string& path, const SpectrumReport& rep) {
  Image img = Image::zeros(rep.h, rep.w, 1);
  double peak = 0.0;
  for (double v : rep.magnitude) peak = std::max(peak, std::log1p(v));
  for (int64_t i = 0; i < rep.h * rep.w; ++i)
    img.px[static_cast<size_t>(i)] =
        peak > 0.0 ? std::log1p(rep.magnitude[static_cast<size_t>(i)]) / peak : 0.0;
  save_image(path, img);
}

}  // namespace vlif
