#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "vlif/tensor.hpp"

namespace vlif {

// Deterministic random source. Distributions are implemented explicitly so
// streams are bit-identical across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; the spare value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Rejection sampling keeps the distribution exact.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  // Derives an independent stream; used to give each subsystem its own sequence.
  Rng fork(uint64_t salt) {
    uint64_t s = gen_() ^ (salt * 0x9e3779b97f4a7c15ull);
    return Rng(s);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mut_data()) v = stddev * rng.normal();
  return t;
}

inline Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mut_data()) v = rng.uniform(lo, hi);
  return t;
}

// He-style init for conv kernels and linear weights feeding rectifiers.
inline Tensor kaiming(Shape shape, Rng& rng, int64_t fan_in) {
  return randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace vlif
