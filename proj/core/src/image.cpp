#include "vlif/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "vlif/ops.hpp"

namespace fs = std::filesystem;

namespace vlif {

Image Image::zeros(int64_t h, int64_t w, int64_t c) {
  if (h < 1 || w < 1 || (c != 1 && c != 3)) throw ValueError("image: bad extents");
  Image img;
  img.h = h;
  img.w = w;
  img.c = c;
  img.px.assign(static_cast<size_t>(h * w * c), 0.0);
  return img;
}

// ---------------------------------------------------------------------------
// NetPBM

namespace {

struct Cursor {
  const std::vector<unsigned char>& buf;
  size_t pos = 0;

  bool eof() const { return pos >= buf.size(); }
  unsigned char peek() const { return buf[pos]; }

  void skip_space_and_comments() {
    while (!eof()) {
      unsigned char ch = buf[pos];
      if (ch == '#') {
        while (!eof() && buf[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int64_t read_int(const char* what) {
    skip_space_and_comments();
    if (eof()) throw ParseError(std::string("expected ") + what, pos);
    if (buf[pos] < '0' || buf[pos] > '9')
      throw ParseError(std::string("expected digit for ") + what, pos);
    int64_t v = 0;
    while (!eof() && buf[pos] >= '0' && buf[pos] <= '9') {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1 << 20) throw ParseError(std::string(what) + " out of range", pos);
      ++pos;
    }
    return v;
  }
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError("cannot open image: " + path);
  f.seekg(0, std::ios::end);
  auto len = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> buf(static_cast<size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw IoError("read failed: " + path);
  return buf;
}

}  // namespace

Image load_image(const std::string& path) {
  auto buf = read_file(path);
  Cursor cur{buf};
  if (buf.size() < 2) throw ParseError("not a NetPBM file", 0);
  if (buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6'))
    throw ParseError("unsupported NetPBM magic", 0);
  const int64_t channels = buf[1] == '6' ? 3 : 1;
  cur.pos = 2;
  int64_t w = cur.read_int("width");
  int64_t h = cur.read_int("height");
  int64_t maxval = cur.read_int("maxval");
  if (maxval != 255) throw ParseError("only maxval 255 is supported", cur.pos);
  if (cur.eof()) throw ParseError("missing payload separator", cur.pos);
  ++cur.pos;  // single whitespace byte after maxval
  const size_t need = static_cast<size_t>(w * h * channels);
  if (buf.size() - cur.pos < need)
    throw ParseError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(buf.size() - cur.pos),
                     cur.pos);
  Image img = Image::zeros(h, w, channels);
  for (size_t i = 0; i < need; ++i)
    img.px[i] = static_cast<double>(buf[cur.pos + i]) / 255.0;
  return img;
}

void save_image(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw ValueError("save_image: 1 or 3 channels required");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) {
    double v = std::round(std::min(std::max(img.px[i], 0.0), 1.0) * 255.0);
    bytes[i] = static_cast<unsigned char>(v);
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor image_to_tensor(const Image& img) {
  Tensor t = Tensor::zeros({img.c, img.h, img.w});
  auto& d = t.mut_data();
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x) d[(ch * img.h + y) * img.w + x] = img.at(y, x, ch);
  return t;
}

Image tensor_to_image(const Tensor& t) {
  Shape s = t.shape();
  if (s.size() == 4) {
    if (s[0] != 1) throw DimensionError("tensor_to_image: leading extent must be 1");
    s.erase(s.begin());
  }
  if (s.size() != 3) throw DimensionError("tensor_to_image: [C,H,W] required");
  Image img = Image::zeros(s[1], s[2], s[0]);
  const auto& d = t.data();
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        img.at(y, x, ch) = std::min(std::max(d[(ch * img.h + y) * img.w + x], 0.0), 1.0);
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic rain

void RainSpec::validate() const {
  if (streak_count < 0) throw ValueError("rain: streak_count must be >= 0");
  if (streak_count > 0) {
    if (!(length_px > 0.0)) throw ValueError("rain: zero-length streaks are degenerate");
    if (!(width_px > 0.0)) throw ValueError("rain: width_px must be positive");
    if (!(intensity > 0.0 && intensity <= 1.0)) throw ValueError("rain: intensity must lie in (0, 1]");
  }
  if (gaussian_blur_sigma < 0.0) throw ValueError("rain: blur sigma must be >= 0");
  if (angle_jitter_deg < 0.0) throw ValueError("rain: angle jitter must be >= 0");
}

namespace {

void blur_inplace(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    ksum += v;
  }
  for (double& v : kernel) v /= ksum;

  Image tmp = img;
  // Horizontal pass, clamped borders.
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch) {
        double acc = 0.0;
        for (int64_t i = -radius; i <= radius; ++i) {
          int64_t xx = std::min(std::max<int64_t>(x + i, 0), img.w - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * img.at(y, xx, ch);
        }
        tmp.at(y, x, ch) = acc;
      }
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch) {
        double acc = 0.0;
        for (int64_t i = -radius; i <= radius; ++i) {
          int64_t yy = std::min(std::max<int64_t>(y + i, 0), img.h - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(yy, x, ch);
        }
        img.at(y, x, ch) = acc;
      }
}

}  // namespace

Image render_rain_layer(int64_t h, int64_t w, const RainSpec& spec) {
  spec.validate();
  Image layer = Image::zeros(h, w, 1);
  Rng rng(spec.seed);
  const double deg = 3.14159265358979323846 / 180.0;
  for (int s = 0; s < spec.streak_count; ++s) {
    // Streak anchors sit on pixel centers so an axis-aligned streak rasterizes
    // to exact columns/rows.
    const double cx = static_cast<double>(rng.next_below(static_cast<uint64_t>(w)));
    const double cy = static_cast<double>(rng.next_below(static_cast<uint64_t>(h)));
    const double jitter = spec.angle_jitter_deg > 0.0
                              ? rng.uniform(-spec.angle_jitter_deg, spec.angle_jitter_deg)
                              : 0.0;
    const double a = (spec.angle_deg + jitter) * deg;
    const double dx = std::sin(a), dy = std::cos(a);  // 0 degrees falls straight down
    const double half_len = spec.length_px / 2.0;
    const double half_w = spec.width_px / 2.0;

    const int64_t x0 = static_cast<int64_t>(std::floor(cx - half_len - half_w - 1));
    const int64_t x1 = static_cast<int64_t>(std::ceil(cx + half_len + half_w + 1));
    const int64_t y0 = static_cast<int64_t>(std::floor(cy - half_len - half_w - 1));
    const int64_t y1 = static_cast<int64_t>(std::ceil(cy + half_len + half_w + 1));
    for (int64_t y = std::max<int64_t>(y0, 0); y <= std::min<int64_t>(y1, h - 1); ++y)
      for (int64_t x = std::max<int64_t>(x0, 0); x <= std::min<int64_t>(x1, w - 1); ++x) {
        // Distance from the pixel center to the segment.
        const double px = static_cast<double>(x) - cx;
        const double py = static_cast<double>(y) - cy;
        double t = px * dx + py * dy;
        t = std::min(std::max(t, -half_len), half_len);
        const double ex = px - t * dx, ey = py - t * dy;
        const double dist = std::sqrt(ex * ex + ey * ey);
        const double cov = std::min(std::max(half_w + 0.5 - dist, 0.0), 1.0);
        double& v = layer.at(y, x, 0);
        v = std::max(v, cov * spec.intensity);
      }
  }
  blur_inplace(layer, spec.gaussian_blur_sigma);
  return layer;
}

ImagePair gen_rain(const Image& clean, const RainSpec& spec, const std::string& id) {
  for (double v : clean.px)
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("gen_rain: clean image outside [0, 1]");
  Image layer = render_rain_layer(clean.h, clean.w, spec);
  ImagePair pair;
  pair.clean = clean;
  pair.rainy = clean;
  pair.id = id;
  pair.source = ImagePair::Source::synthetic;
  for (int64_t y = 0; y < clean.h; ++y)
    for (int64_t x = 0; x < clean.w; ++x) {
      const double r = layer.at(y, x, 0);
      for (int64_t ch = 0; ch < clean.c; ++ch) {
        double& v = pair.rainy.at(y, x, ch);
        v = std::min(v + r, 1.0);
      }
    }
  return pair;
}

Image make_clean_image(int64_t h, int64_t w, Rng& rng) {
  const int64_t g = 4;  // control-grid resolution
  Tensor grid = Tensor::zeros({1, 3, g, g});
  auto& d = grid.mut_data();
  // Shared luminance field plus a small per-channel tint keeps channels
  // correlated like natural scenes.
  std::vector<double> luma(static_cast<size_t>(g * g));
  for (double& v : luma) v = rng.uniform(0.2, 0.8);
  for (int64_t ch = 0; ch < 3; ++ch) {
    const double tint = rng.uniform(-0.08, 0.08);
    for (int64_t i = 0; i < g * g; ++i)
      d[static_cast<size_t>(ch * g * g + i)] =
          std::min(std::max(luma[static_cast<size_t>(i)] + tint, 0.05), 0.95);
  }
  Tensor up = bilinear_resize(grid, h, w);
  return tensor_to_image(up);
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const fs::path rainy_dir = fs::path(dir) / "rainy";
  const fs::path clean_dir = fs::path(dir) / "clean";
  if (!fs::is_directory(rainy_dir) || !fs::is_directory(clean_dir)) return ds;

  std::vector<std::string> rainy_names;
  for (const auto& e : fs::directory_iterator(rainy_dir))
    if (e.is_regular_file()) rainy_names.push_back(e.path().filename().string());
  std::sort(rainy_names.begin(), rainy_names.end());

  std::vector<std::string> clean_names;
  for (const auto& e : fs::directory_iterator(clean_dir))
    if (e.is_regular_file()) clean_names.push_back(e.path().filename().string());
  std::sort(clean_names.begin(), clean_names.end());

  for (const std::string& name : rainy_names) {
    if (!fs::exists(clean_dir / name)) {
      ds.skipped.push_back({name, "no clean counterpart"});
      continue;
    }
    ImagePair pair;
    pair.rainy = load_image((rainy_dir / name).string());
    pair.clean = load_image((clean_dir / name).string());
    pair.id = name;
    pair.source = ImagePair::Source::external;
    if (pair.rainy.h != pair.clean.h || pair.rainy.w != pair.clean.w ||
        pair.rainy.c != pair.clean.c) {
      ds.skipped.push_back({name, "shape mismatch between rainy and clean"});
      continue;
    }
    ds.pairs.push_back(std::move(pair));
  }
  for (const std::string& name : clean_names)
    if (!fs::exists(rainy_dir / name)) ds.skipped.push_back({name, "no rainy counterpart"});
  return ds;
}

ImagePair random_crop(const ImagePair& pair, int64_t patch, Rng& rng) {
  if (patch < 1) throw ValueError("random_crop: patch must be >= 1");
  if (patch > pair.rainy.h || patch > pair.rainy.w)
    throw ValueError("random_crop: patch larger than image");
  if (patch == pair.rainy.h && patch == pair.rainy.w) return pair;
  const int64_t y0 = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(pair.rainy.h - patch + 1)));
  const int64_t x0 = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(pair.rainy.w - patch + 1)));
  ImagePair out;
  out.id = pair.id;
  out.source = pair.source;
  out.rainy = Image::zeros(patch, patch, pair.rainy.c);
  out.clean = Image::zeros(patch, patch, pair.clean.c);
  for (int64_t y = 0; y < patch; ++y)
    for (int64_t x = 0; x < patch; ++x)
      for (int64_t ch = 0; ch < pair.rainy.c; ++ch) {
        out.rainy.at(y, x, ch) = pair.rainy.at(y0 + y, x0 + x, ch);
        out.clean.at(y, x, ch) = pair.clean.at(y0 + y, x0 + x, ch);
      }
  return out;
}

}  // namespace vlif
