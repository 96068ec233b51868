#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vlif/ops.hpp"
#include "vlif/rng.hpp"
#include "vlif/tensor.hpp"

namespace vlif::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return rand_uniform(std::move(shape), rng, lo, hi);
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "<input>#<coordinate>"
};

// Central-difference check of reverse-mode gradients.
//
// `f` rebuilds its graph from the given leaves on every call and returns any
// tensor; the harness projects it to a scalar with fixed random weights so a
// single sweep covers every output. Coordinates are subsampled
// deterministically when an input is large.
inline GradCheckResult gradcheck(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double h = 1e-5, int64_t max_coords_per_input = 64, uint64_t proj_seed = 1234) {
  for (Tensor& t : inputs) t.set_requires_grad(true);

  Tensor first = f(inputs);
  Rng proj_rng(proj_seed);
  Tensor weights = rand_uniform(first.shape(), proj_rng, 0.5, 1.5);
  auto project = [&](const Tensor& out) { return sum(mul(out, weights)); };

  for (Tensor& t : inputs) t.zero_grad();
  Tensor loss = project(f(inputs));
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.data().size(), 0.0));

  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = inputs[i];
    const int64_t n = t.numel();
    const int64_t stride = std::max<int64_t>(1, n / max_coords_per_input);
    for (int64_t j = 0; j < n; j += stride) {
      auto& d = t.mut_data();
      const double orig = d[static_cast<size_t>(j)];
      d[static_cast<size_t>(j)] = orig + h;
      const double up = project(f(inputs)).item();
      d[static_cast<size_t>(j)] = orig - h;
      const double dn = project(f(inputs)).item();
      d[static_cast<size_t>(j)] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic[i][static_cast<size_t>(j)];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      const double rel = std::abs(fd - an) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input" + std::to_string(i) + "#" + std::to_string(j);
      }
    }
  }
  return res;
}

}  // namespace vlif::test
