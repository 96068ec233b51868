#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlif/rng.hpp"
#include "vlif/tensor.hpp"

namespace vlif {

// Interleaved H x W x C image, values normalized to [0, 1].
struct Image {
  int64_t h = 0, w = 0, c = 0;
  std::vector<double> px;

  static Image zeros(int64_t h, int64_t w, int64_t c);
  double& at(int64_t y, int64_t x, int64_t ch) { return px[(y * w + x) * c + ch]; }
  double at(int64_t y, int64_t x, int64_t ch) const { return px[(y * w + x) * c + ch]; }
};

// NetPBM binary formats, maxval 255: P6 (RGB) and P5 (gray). Values map to
// [0,1] by /255; writing rounds to the nearest byte, so a save/load round
// trip is within 1/255 per channel.
Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& img);

Tensor image_to_tensor(const Image& img);  // [C,H,W]
Image tensor_to_image(const Tensor& t);    // accepts [C,H,W] or [1,C,H,W], clamps to [0,1]

struct ImagePair {
  Image rainy;
  Image clean;
  std::string id;
  enum class Source { synthetic, external } source = Source::synthetic;
};

// Additive streak model: rainy = clamp(clean + rain_layer, 0, 1).
struct RainSpec {
  int streak_count = 12;
  double length_px = 14.0;
  double angle_deg = 15.0;        // tilt from vertical, clockwise
  double angle_jitter_deg = 4.0;  // per-streak uniform jitter
  double width_px = 1.0;
  double intensity = 0.6;         // in (0, 1]
  double gaussian_blur_sigma = 0.5;
  uint64_t seed = 1;

  void validate() const;
};

Image render_rain_layer(int64_t h, int64_t w, const RainSpec& spec);
ImagePair gen_rain(const Image& clean, const RainSpec& spec, const std::string& id = "pair");

// Smooth synthetic scene: low-resolution random field upsampled bilinearly.
Image make_clean_image(int64_t h, int64_t w, Rng& rng);

struct SkipRecord {
  std::string id;
  std::string reason;
};

// Directory layout: <dir>/rainy/NNN.ppm matched with <dir>/clean/NNN.ppm by
// filename. Deterministic filename-sorted order; unmatched files are listed
// in `skipped`, not fatal.
struct Dataset {
  std::vector<ImagePair> pairs;
  std::vector<SkipRecord> skipped;
};
Dataset load_dataset(const std::string& dir);

// Aligned random crop of both sides; the pair is returned unchanged when the
// patch covers the full image.
ImagePair random_crop(const ImagePair& pair, int64_t patch, Rng& rng);

}  // namespace vlif
