#include "vlif/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vlif {

namespace {

// ---------------------------------------------------------------------------
// Row-major f64 GEMM kernels, accumulate into C. The saxpy-style inner loops
// keep the hot path contiguous so the compiler can vectorize.

void gemm_nn(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const double aik = a[k];
      if (aik == 0.0) continue;
      const double* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[M,N] += A^T * B with A [K,M], B [K,N].
void gemm_tn(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (int64_t i = 0; i < M; ++i) {
      const double aki = a[i];
      if (aki == 0.0) continue;
      double* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

// C[M,N] += A * B^T with A [M,K], B [N,K]. The pragma licenses a vectorized
// reduction; lane order is fixed per build, so results stay deterministic.
void gemm_nt(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](detail::Node& self) {
                     for (int k = 0; k < 2; ++k) {
                       auto& in = *self.inputs[k];
                       if (!in.requires_grad) continue;
                       auto& g = in.grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     }
                   },
                   "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](detail::Node& self) {
                     if (self.inputs[0]->requires_grad) {
                       auto& g = self.inputs[0]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     }
                     if (self.inputs[1]->requires_grad) {
                       auto& g = self.inputs[1]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                     }
                   },
                   "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](detail::Node& self) {
                     const auto& ad = self.inputs[0]->data;
                     const auto& bd2 = self.inputs[1]->data;
                     if (self.inputs[0]->requires_grad) {
                       auto& g = self.inputs[0]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bd2[i];
                     }
                     if (self.inputs[1]->requires_grad) {
                       auto& g = self.inputs[1]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ad[i];
                     }
                   },
                   "mul");
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v += s;
  return make_node(a.shape(), std::move(out), {a},
                   [](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   },
                   "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  return make_node(a.shape(), std::move(out), {a},
                   [s](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
                   },
                   "mul_scalar");
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("scale_by: scale must have a single value");
  const double sv = s.data()[0];
  std::vector<double> out(x.data());
  for (double& v : out) v *= sv;
  return make_node(x.shape(), std::move(out), {x, s},
                   [sv](detail::Node& self) {
                     const auto& xd = self.inputs[0]->data;
                     if (self.inputs[0]->requires_grad) {
                       auto& g = self.inputs[0]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += sv * self.grad[i];
                     }
                     if (self.inputs[1]->requires_grad) {
                       double acc = 0.0;
                       for (size_t i = 0; i < xd.size(); ++i) acc += self.grad[i] * xd[i];
                       self.inputs[1]->grad_buf()[0] += acc;
                     }
                   },
                   "scale_by");
}

namespace {

// Row-major strides of g against x's shape, zeroed on broadcast axes and
// padded to rank 4 with leading singletons.
struct Bcast4 {
  int64_t e[4] = {1, 1, 1, 1};   // x extents
  int64_t gs[4] = {0, 0, 0, 0};  // g strides (0 where broadcast)
};

Bcast4 bcast4_layout(const Shape& xs, const Shape& gs_shape) {
  Bcast4 b;
  const size_t off = 4 - xs.size();
  for (size_t i = 0; i < xs.size(); ++i) b.e[off + i] = xs[i];
  auto gstr = row_major_strides(gs_shape);
  for (size_t i = 0; i < gs_shape.size(); ++i)
    b.gs[off + i] = gs_shape[i] == 1 ? 0 : gstr[i];
  return b;
}

}  // namespace

Tensor broadcast_mul(const Tensor& x, const Tensor& g) {
  if (x.rank() != g.rank() || x.rank() > 4)
    throw DimensionError("broadcast_mul: rank mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(g.shape()));
  const Shape& xs = x.shape();
  const Shape& gs = g.shape();
  for (size_t i = 0; i < xs.size(); ++i)
    if (gs[i] != 1 && gs[i] != xs[i])
      throw DimensionError("broadcast_mul: extent " + std::to_string(gs[i]) +
                           " not broadcastable to " + std::to_string(xs[i]));
  const Bcast4 b = bcast4_layout(xs, gs);
  const auto& xd = x.data();
  const auto& gd = g.data();
  std::vector<double> out(xd.size());
  {
    size_t p = 0;
    for (int64_t i0 = 0; i0 < b.e[0]; ++i0)
      for (int64_t i1 = 0; i1 < b.e[1]; ++i1)
        for (int64_t i2 = 0; i2 < b.e[2]; ++i2) {
          const double* grow = gd.data() + i0 * b.gs[0] + i1 * b.gs[1] + i2 * b.gs[2];
          if (b.gs[3] == 0) {
            const double gv = grow[0];
            for (int64_t i3 = 0; i3 < b.e[3]; ++i3, ++p) out[p] = xd[p] * gv;
          } else {
            for (int64_t i3 = 0; i3 < b.e[3]; ++i3, ++p) out[p] = xd[p] * grow[i3];
          }
        }
  }
  return make_node(xs, std::move(out), {x, g},
                   [b](detail::Node& self) {
                     const auto& xd2 = self.inputs[0]->data;
                     const auto& gd2 = self.inputs[1]->data;
                     const bool need_dx = self.inputs[0]->requires_grad;
                     const bool need_dg = self.inputs[1]->requires_grad;
                     double* gx = need_dx ? self.inputs[0]->grad_buf().data() : nullptr;
                     double* gg = need_dg ? self.inputs[1]->grad_buf().data() : nullptr;
                     size_t p = 0;
                     for (int64_t i0 = 0; i0 < b.e[0]; ++i0)
                       for (int64_t i1 = 0; i1 < b.e[1]; ++i1)
                         for (int64_t i2 = 0; i2 < b.e[2]; ++i2) {
                           const int64_t base = i0 * b.gs[0] + i1 * b.gs[1] + i2 * b.gs[2];
                           for (int64_t i3 = 0; i3 < b.e[3]; ++i3, ++p) {
                             const int64_t gi = base + i3 * b.gs[3];
                             if (need_dx) gx[p] += self.grad[p] * gd2[static_cast<size_t>(gi)];
                             if (need_dg) gg[gi] += self.grad[p] * xd2[p];
                           }
                         }
                   },
                   "broadcast_mul");
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_node(x.shape(), std::move(out), {x},
                   [](detail::Node& self) {
                     const auto& xd = self.inputs[0]->data;
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i)
                       if (xd[i] > 0.0) g[i] += self.grad[i];
                   },
                   "relu");
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  std::vector<double> out(x.data());
  for (double& v : out) v = v > 0.0 ? v : negative_slope * v;
  return make_node(x.shape(), std::move(out), {x},
                   [negative_slope](detail::Node& self) {
                     const auto& xd = self.inputs[0]->data;
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i)
                       g[i] += (xd[i] > 0.0 ? 1.0 : negative_slope) * self.grad[i];
                   },
                   "leaky_relu");
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_node(x.shape(), std::move(out), {x},
                   [](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i) {
                       double y = self.data[i];
                       g[i] += self.grad[i] * y * (1.0 - y);
                     }
                   },
                   "sigmoid");
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  std::vector<double> out(x.data());
  for (double& v : out) v = std::min(std::max(v, lo), hi);
  return make_node(x.shape(), std::move(out), {x},
                   [lo, hi](detail::Node& self) {
                     const auto& xd = self.inputs[0]->data;
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i)
                       if (xd[i] >= lo && xd[i] <= hi) g[i] += self.grad[i];
                   },
                   "clamp");
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_node({1}, {acc}, {x},
                   [](detail::Node& self) {
                     const double d = self.grad[0];
                     auto& g = self.inputs[0]->grad_buf();
                     for (double& v : g) v += d;
                   },
                   "sum");
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_node({1}, {acc * inv}, {x},
                   [inv](detail::Node& self) {
                     const double d = self.grad[0] * inv;
                     auto& g = self.inputs[0]->grad_buf();
                     for (double& v : g) v += d;
                   },
                   "mean");
}

Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes) {
  const Shape& xs = x.shape();
  if (xs.size() > 4) throw DimensionError("reduce_mean: rank <= 4 required");
  Shape os = xs;
  int64_t group = 1;
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(xs.size()))
      throw DimensionError("reduce_mean: bad axis " + std::to_string(a));
    if (os[static_cast<size_t>(a)] == 1 && xs[static_cast<size_t>(a)] == 1) continue;
    group *= xs[static_cast<size_t>(a)];
    os[static_cast<size_t>(a)] = 1;
  }
  const Bcast4 b = bcast4_layout(xs, os);
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(shape_numel(os)), 0.0);
  {
    size_t p = 0;
    for (int64_t i0 = 0; i0 < b.e[0]; ++i0)
      for (int64_t i1 = 0; i1 < b.e[1]; ++i1)
        for (int64_t i2 = 0; i2 < b.e[2]; ++i2) {
          const int64_t base = i0 * b.gs[0] + i1 * b.gs[1] + i2 * b.gs[2];
          if (b.gs[3] == 0) {
            double acc = 0.0;
            for (int64_t i3 = 0; i3 < b.e[3]; ++i3, ++p) acc += xd[p];
            out[static_cast<size_t>(base)] += acc;
          } else {
            for (int64_t i3 = 0; i3 < b.e[3]; ++i3, ++p)
              out[static_cast<size_t>(base + i3 * b.gs[3])] += xd[p];
          }
        }
  }
  const double inv = 1.0 / static_cast<double>(group);
  for (double& v : out) v *= inv;
  return make_node(os, std::move(out), {x},
                   [b, inv](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     size_t p = 0;
                     for (int64_t i0 = 0; i0 < b.e[0]; ++i0)
                       for (int64_t i1 = 0; i1 < b.e[1]; ++i1)
                         for (int64_t i2 = 0; i2 < b.e[2]; ++i2) {
                           const int64_t base = i0 * b.gs[0] + i1 * b.gs[1] + i2 * b.gs[2];
                           for (int64_t i3 = 0; i3 < b.e[3]; ++i3, ++p)
                             g[p] += inv * self.grad[static_cast<size_t>(base + i3 * b.gs[3])];
                         }
                   },
                   "reduce_mean");
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
  std::vector<double> out(x.data());
  return make_node(std::move(new_shape), std::move(out), {x},
                   [](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   },
                   "reshape");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4) throw DimensionError("concat_channels: rank-4 tensors required");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw DimensionError("concat_channels: " + shape_str(as) + " vs " + shape_str(bs));
  Shape os = {as[0], as[1] + bs[1], as[2], as[3]};
  const int64_t plane = as[2] * as[3];
  const int64_t ca = as[1], cb = bs[1];
  std::vector<double> out(static_cast<size_t>(shape_numel(os)));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int64_t n = 0; n < as[0]; ++n) {
    std::memcpy(out.data() + (n * (ca + cb)) * plane, ad.data() + n * ca * plane,
                static_cast<size_t>(ca * plane) * sizeof(double));
    std::memcpy(out.data() + (n * (ca + cb) + ca) * plane, bd.data() + n * cb * plane,
                static_cast<size_t>(cb * plane) * sizeof(double));
  }
  return make_node(std::move(os), std::move(out), {a, b},
                   [ca, cb, plane, n_steps = as[0]](detail::Node& self) {
                     for (int64_t n = 0; n < n_steps; ++n) {
                       const double* g = self.grad.data() + (n * (ca + cb)) * plane;
                       if (self.inputs[0]->requires_grad) {
                         auto& ga = self.inputs[0]->grad_buf();
                         double* dst = ga.data() + n * ca * plane;
                         for (int64_t i = 0; i < ca * plane; ++i) dst[i] += g[i];
                       }
                       if (self.inputs[1]->requires_grad) {
                         auto& gb = self.inputs[1]->grad_buf();
                         double* dst = gb.data() + n * cb * plane;
                         for (int64_t i = 0; i < cb * plane; ++i) dst[i] += g[ca * plane + i];
                       }
                     }
                   },
                   "concat_channels");
}

Tensor select_step(const Tensor& x, int64_t t) {
  if (x.rank() < 2) throw DimensionError("select_step: rank >= 2 required");
  const Shape& xs = x.shape();
  if (t < 0 || t >= xs[0]) throw DimensionError("select_step: index out of range");
  Shape os(xs.begin() + 1, xs.end());
  const int64_t chunk = shape_numel(os);
  std::vector<double> out(x.data().begin() + t * chunk, x.data().begin() + (t + 1) * chunk);
  return make_node(std::move(os), std::move(out), {x},
                   [t, chunk](detail::Node& self) {
                     auto& g = self.inputs[0]->grad_buf();
                     double* dst = g.data() + t * chunk;
                     for (int64_t i = 0; i < chunk; ++i) dst[i] += self.grad[static_cast<size_t>(i)];
                   },
                   "select_step");
}

Tensor stack_steps(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ContractError("stack_steps: empty input");
  const Shape& es = steps[0].shape();
  for (const Tensor& s : steps) check_same_shape(steps[0], s, "stack_steps");
  Shape os;
  os.push_back(static_cast<int64_t>(steps.size()));
  os.insert(os.end(), es.begin(), es.end());
  const int64_t chunk = shape_numel(es);
  std::vector<double> out(static_cast<size_t>(chunk * static_cast<int64_t>(steps.size())));
  for (size_t s = 0; s < steps.size(); ++s)
    std::memcpy(out.data() + static_cast<int64_t>(s) * chunk, steps[s].data().data(),
                static_cast<size_t>(chunk) * sizeof(double));
  std::vector<Tensor> ins(steps.begin(), steps.end());
  return make_node(std::move(os), std::move(out), std::move(ins),
                   [chunk](detail::Node& self) {
                     for (size_t s = 0; s < self.inputs.size(); ++s) {
                       auto& in = *self.inputs[s];
                       if (!in.requires_grad) continue;
                       auto& g = in.grad_buf();
                       const double* src = self.grad.data() + static_cast<int64_t>(s) * chunk;
                       for (int64_t i = 0; i < chunk; ++i) g[static_cast<size_t>(i)] += src[i];
                     }
                   },
                   "stack_steps");
}

// ---------------------------------------------------------------------------
// Linear / conv / norm

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2) throw DimensionError("linear: rank-2 x and w required");
  const int64_t n = x.size(0), k = x.size(1), m = w.size(0);
  if (w.size(1) != k)
    throw DimensionError("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.size(0) != m))
    throw DimensionError("linear: bias shape " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(n * m), 0.0);
  gemm_nt(x.data().data(), w.data().data(), out.data(), n, k, m);
  if (b.defined()) {
    const auto& bd = b.data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < m; ++j) out[static_cast<size_t>(i * m + j)] += bd[static_cast<size_t>(j)];
  }
  std::vector<Tensor> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  return make_node({n, m}, std::move(out), std::move(ins),
                   [n, k, m](detail::Node& self) {
                     const auto& xd = self.inputs[0]->data;
                     const auto& wd = self.inputs[1]->data;
                     if (self.inputs[0]->requires_grad) {
                       auto& gx = self.inputs[0]->grad_buf();
                       gemm_nn(self.grad.data(), wd.data(), gx.data(), n, m, k);
                     }
                     if (self.inputs[1]->requires_grad) {
                       auto& gw = self.inputs[1]->grad_buf();
                       gemm_tn(self.grad.data(), xd.data(), gw.data(), m, n, k);
                     }
                     if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                       auto& gb = self.inputs[2]->grad_buf();
                       for (int64_t i = 0; i < n; ++i)
                         for (int64_t j = 0; j < m; ++j)
                           gb[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * m + j)];
                     }
                   },
                   "linear");
}

namespace {

struct ConvDims {
  int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Shape& xs, const Shape& ks, int stride, int padding) {
  if (xs.size() != 4 || ks.size() != 4) throw DimensionError("conv2d: rank-4 input and kernel required");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  if (xs[1] != ks[1])
    throw DimensionError("conv2d: input channels " + std::to_string(xs[1]) +
                         " vs kernel in-channels " + std::to_string(ks[1]));
  ConvDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ks[0];
  d.kh = ks[2];
  d.kw = ks[3];
  d.stride = stride;
  d.pad = padding;
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw)
    throw DimensionError("conv2d: kernel larger than padded input");
  return d;
}

// col [Cin*kh*kw, Ho*Wo] for one batch element.
void im2col(const double* x, const ConvDims& d, double* col) {
  const int64_t hw = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin; ++c) {
    const double* xc = x + c * d.h * d.w;
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) {
            std::fill(row + oy * d.wo, row + (oy + 1) * d.wo, 0.0);
            continue;
          }
          const double* xrow = xc + iy * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kj;
            row[oy * d.wo + ox] = (ix >= 0 && ix < d.w) ? xrow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, const ConvDims& d, double* x) {
  const int64_t hw = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin; ++c) {
    double* xc = x + c * d.h * d.w;
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          double* xrow = xc + iy * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kj;
            if (ix >= 0 && ix < d.w) xrow[ix] += row[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

int64_t conv2d_macs(const Shape& x, const Shape& k, int stride, int padding) {
  ConvDims d = conv_dims(x, k, stride, padding);
  return d.n * d.cout * d.cin * d.kh * d.kw * d.ho * d.wo;
}

namespace {

// Scratch for the im2col buffers; reused across calls to keep the hot path
// free of large allocations.
std::vector<double>& conv_scratch(int which, size_t n) {
  thread_local std::vector<double> bufs[3];
  if (bufs[which].size() < n) bufs[which].resize(n);
  return bufs[which];
}

bool is_pointwise(const ConvDims& d) {
  return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int padding) {
  ConvDims d = conv_dims(x.shape(), k.shape(), stride, padding);
  const int64_t ckk = d.cin * d.kh * d.kw;
  const int64_t hw = d.ho * d.wo;
  std::vector<double> out(static_cast<size_t>(d.n * d.cout * hw), 0.0);
  const bool pointwise = is_pointwise(d);
  std::vector<double>& col = conv_scratch(0, pointwise ? 0 : static_cast<size_t>(ckk * hw));
  for (int64_t n = 0; n < d.n; ++n) {
    const double* src = x.data().data() + n * d.cin * d.h * d.w;
    if (!pointwise) {
      im2col(src, d, col.data());
      src = col.data();
    }
    gemm_nn(k.data().data(), src, out.data() + n * d.cout * hw, d.cout, ckk, hw);
  }
  return make_node({d.n, d.cout, d.ho, d.wo}, std::move(out), {x, k},
                   [d, ckk, hw](detail::Node& self) {
                     const auto& xd = self.inputs[0]->data;
                     const auto& kd = self.inputs[1]->data;
                     const bool need_dx = self.inputs[0]->requires_grad;
                     const bool need_dk = self.inputs[1]->requires_grad;
                     const bool pointwise = is_pointwise(d);
                     std::vector<double>& col =
                         conv_scratch(0, pointwise ? 0 : static_cast<size_t>(ckk * hw));
                     std::vector<double>& dcol = conv_scratch(
                         1, (need_dx && !pointwise) ? static_cast<size_t>(ckk * hw) : 0);
                     for (int64_t n = 0; n < d.n; ++n) {
                       const double* dy = self.grad.data() + n * d.cout * hw;
                       if (need_dk) {
                         const double* src = xd.data() + n * d.cin * d.h * d.w;
                         if (!pointwise) {
                           im2col(src, d, col.data());
                           src = col.data();
                         }
                         // dK = dY * col^T; both operands are contiguous over hw.
                         gemm_nt(dy, src, self.inputs[1]->grad_buf().data(), d.cout, hw, ckk);
                       }
                       if (need_dx) {
                         double* gx = self.inputs[0]->grad_buf().data() + n * d.cin * d.h * d.w;
                         if (pointwise) {
                           gemm_tn(kd.data(), dy, gx, ckk, d.cout, hw);
                         } else {
                           std::fill(dcol.begin(), dcol.begin() + ckk * hw, 0.0);
                           gemm_tn(kd.data(), dy, dcol.data(), ckk, d.cout, hw);
                           col2im_acc(dcol.data(), d, gx);
                         }
                       }
                     }
                   },
                   "conv2d");
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (x.rank() != 4 || b.rank() != 1 || b.size(0) != x.size(1))
    throw DimensionError("bias_add: x " + shape_str(x.shape()) + " bias " + shape_str(b.shape()));
  const int64_t n = x.size(0), c = x.size(1), plane = x.size(2) * x.size(3);
  std::vector<double> out(x.data());
  const auto& bd = b.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double bv = bd[static_cast<size_t>(ch)];
      double* p = out.data() + (i * c + ch) * plane;
      for (int64_t j = 0; j < plane; ++j) p[j] += bv;
    }
  return make_node(x.shape(), std::move(out), {x, b},
                   [n, c, plane](detail::Node& self) {
                     if (self.inputs[0]->requires_grad) {
                       auto& g = self.inputs[0]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     }
                     if (self.inputs[1]->requires_grad) {
                       auto& gb = self.inputs[1]->grad_buf();
                       for (int64_t i = 0; i < n; ++i)
                         for (int64_t ch = 0; ch < c; ++ch) {
                           const double* p = self.grad.data() + (i * c + ch) * plane;
                           double acc = 0.0;
                           for (int64_t j = 0; j < plane; ++j) acc += p[j];
                           gb[static_cast<size_t>(ch)] += acc;
                         }
                     }
                   },
                   "bias_add");
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double eps, double momentum) {
  if (x.rank() != 4) throw DimensionError("batch_norm: rank-4 input required");
  const int64_t n = x.size(0), c = x.size(1), plane = x.size(2) * x.size(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw DimensionError("batch_norm: per-channel parameter size mismatch");
  if (!(eps > 0.0)) throw ContractError("batch_norm: eps must be positive");
  const int64_t count = n * plane;
  const auto& xd = x.data();

  std::vector<double> mu(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  if (training) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* p = xd.data() + (i * c + ch) * plane;
        double acc = 0.0;
        for (int64_t j = 0; j < plane; ++j) acc += p[j];
        mu[static_cast<size_t>(ch)] += acc;
      }
    for (double& v : mu) v /= static_cast<double>(count);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const double m = mu[static_cast<size_t>(ch)];
        const double* p = xd.data() + (i * c + ch) * plane;
        double acc = 0.0;
        for (int64_t j = 0; j < plane; ++j) {
          const double dvv = p[j] - m;
          acc += dvv * dvv;
        }
        var[static_cast<size_t>(ch)] += acc;
      }
    for (double& v : var) v /= static_cast<double>(count);
    // Fold batch statistics into the running buffers (unbiased variance).
    auto& rm = running_mean.mut_data();
    auto& rv = running_var.mut_data();
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      rm[static_cast<size_t>(ch)] =
          (1.0 - momentum) * rm[static_cast<size_t>(ch)] + momentum * mu[static_cast<size_t>(ch)];
      rv[static_cast<size_t>(ch)] = (1.0 - momentum) * rv[static_cast<size_t>(ch)] +
                                    momentum * unbias * var[static_cast<size_t>(ch)];
    }
  } else {
    mu = running_mean.data();
    var = running_var.data();
  }

  std::vector<double> inv(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch)
    inv[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + eps);

  std::vector<double> xhat(xd.size());
  std::vector<double> out(xd.size());
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double m = mu[static_cast<size_t>(ch)];
      const double iv = inv[static_cast<size_t>(ch)];
      const double ga = gd[static_cast<size_t>(ch)];
      const double be = bd[static_cast<size_t>(ch)];
      const int64_t base = (i * c + ch) * plane;
      for (int64_t j = 0; j < plane; ++j) {
        const double h = (xd[static_cast<size_t>(base + j)] - m) * iv;
        xhat[static_cast<size_t>(base + j)] = h;
        out[static_cast<size_t>(base + j)] = ga * h + be;
      }
    }

  return make_node(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, plane, training, inv = std::move(inv), xhat = std::move(xhat)](detail::Node& self) {
        const auto& gd2 = self.inputs[1]->data;
        const int64_t count = n * plane;
        // d_gamma = sum(dy * xhat), d_beta = sum(dy), per channel.
        std::vector<double> dg(static_cast<size_t>(c), 0.0), db(static_cast<size_t>(c), 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t base = (i * c + ch) * plane;
            double accg = 0.0, accb = 0.0;
            for (int64_t j = 0; j < plane; ++j) {
              const double dy = self.grad[static_cast<size_t>(base + j)];
              accg += dy * xhat[static_cast<size_t>(base + j)];
              accb += dy;
            }
            dg[static_cast<size_t>(ch)] += accg;
            db[static_cast<size_t>(ch)] += accb;
          }
        if (self.inputs[1]->requires_grad) {
          auto& g = self.inputs[1]->grad_buf();
          for (int64_t ch = 0; ch < c; ++ch) g[static_cast<size_t>(ch)] += dg[static_cast<size_t>(ch)];
        }
        if (self.inputs[2]->requires_grad) {
          auto& g = self.inputs[2]->grad_buf();
          for (int64_t ch = 0; ch < c; ++ch) g[static_cast<size_t>(ch)] += db[static_cast<size_t>(ch)];
        }
        if (self.inputs[0]->requires_grad) {
          auto& gx = self.inputs[0]->grad_buf();
          if (training) {
            // dx = inv * gamma * (dy - mean(dy) - xhat * mean(dy*xhat))
            for (int64_t i = 0; i < n; ++i)
              for (int64_t ch = 0; ch < c; ++ch) {
                const double iv = inv[static_cast<size_t>(ch)];
                const double ga = gd2[static_cast<size_t>(ch)];
                const double mean_dy = db[static_cast<size_t>(ch)] / static_cast<double>(count);
                const double mean_dyx = dg[static_cast<size_t>(ch)] / static_cast<double>(count);
                const int64_t base = (i * c + ch) * plane;
                for (int64_t j = 0; j < plane; ++j) {
                  const double dy = self.grad[static_cast<size_t>(base + j)];
                  gx[static_cast<size_t>(base + j)] +=
                      iv * ga * (dy - mean_dy - xhat[static_cast<size_t>(base + j)] * mean_dyx);
                }
              }
          } else {
            for (int64_t i = 0; i < n; ++i)
              for (int64_t ch = 0; ch < c; ++ch) {
                const double scale = inv[static_cast<size_t>(ch)] * gd2[static_cast<size_t>(ch)];
                const int64_t base = (i * c + ch) * plane;
                for (int64_t j = 0; j < plane; ++j)
                  gx[static_cast<size_t>(base + j)] += scale * self.grad[static_cast<size_t>(base + j)];
              }
          }
        }
      },
      "batch_norm");
}

namespace {

struct Tap {
  int64_t lo, hi;
  double frac;  // weight of hi; (1 - frac) goes to lo
};

// Align-corners-false source taps; exact identity when extents match.
std::vector<Tap> resize_taps(int64_t in, int64_t out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    Tap t;
    if (src <= 0.0) {
      t.lo = t.hi = 0;
      t.frac = 0.0;
    } else {
      int64_t lo = static_cast<int64_t>(src);
      if (lo > in - 1) lo = in - 1;
      t.lo = lo;
      t.hi = std::min<int64_t>(lo + 1, in - 1);
      t.frac = src - static_cast<double>(lo);
      if (t.hi == t.lo) t.frac = 0.0;
    }
    taps[static_cast<size_t>(o)] = t;
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 4) throw DimensionError("bilinear_resize: rank-4 input required");
  if (out_h < 1 || out_w < 1) throw ContractError("bilinear_resize: output extents must be >= 1");
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto ys = resize_taps(h, out_h);
  auto xs = resize_taps(w, out_w);
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(n * c * out_h * out_w));
  for (int64_t img = 0; img < n * c; ++img) {
    const double* src = xd.data() + img * h * w;
    double* dst = out.data() + img * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& ty = ys[static_cast<size_t>(oy)];
      const double* r0 = src + ty.lo * w;
      const double* r1 = src + ty.hi * w;
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& tx = xs[static_cast<size_t>(ox)];
        const double top = (1.0 - tx.frac) * r0[tx.lo] + tx.frac * r0[tx.hi];
        const double bot = (1.0 - tx.frac) * r1[tx.lo] + tx.frac * r1[tx.hi];
        dst[oy * out_w + ox] = (1.0 - ty.frac) * top + ty.frac * bot;
      }
    }
  }
  return make_node({n, c, out_h, out_w}, std::move(out), {x},
                   [n, c, h, w, out_h, out_w, ys = std::move(ys), xs = std::move(xs)](detail::Node& self) {
                     auto& gx = self.inputs[0]->grad_buf();
                     for (int64_t img = 0; img < n * c; ++img) {
                       double* gsrc = gx.data() + img * h * w;
                       const double* gdst = self.grad.data() + img * out_h * out_w;
                       for (int64_t oy = 0; oy < out_h; ++oy) {
                         const Tap& ty = ys[static_cast<size_t>(oy)];
                         for (int64_t ox = 0; ox < out_w; ++ox) {
                           const Tap& tx = xs[static_cast<size_t>(ox)];
                           const double g = gdst[oy * out_w + ox];
                           gsrc[ty.lo * w + tx.lo] += (1.0 - ty.frac) * (1.0 - tx.frac) * g;
                           gsrc[ty.lo * w + tx.hi] += (1.0 - ty.frac) * tx.frac * g;
                           gsrc[ty.hi * w + tx.lo] += ty.frac * (1.0 - tx.frac) * g;
                           gsrc[ty.hi * w + tx.hi] += ty.frac * tx.frac * g;
                         }
                       }
                     }
                   },
                   "bilinear_resize");
}

Tensor add_time_table(const Tensor& x, const Tensor& table) {
  if (x.rank() != 4 || table.rank() != 2)
    throw DimensionError("add_time_table: x rank 4 and table rank 2 required");
  const int64_t t = x.size(0), c = x.size(1), plane = x.size(2) * x.size(3);
  if (table.size(0) != t || table.size(1) != c)
    throw DimensionError("add_time_table: table " + shape_str(table.shape()) + " vs x " +
                         shape_str(x.shape()));
  std::vector<double> out(x.data());
  const auto& td = table.data();
  for (int64_t i = 0; i < t * c; ++i) {
    const double v = td[static_cast<size_t>(i)];
    double* p = out.data() + i * plane;
    for (int64_t j = 0; j < plane; ++j) p[j] += v;
  }
  return make_node(x.shape(), std::move(out), {x, table},
                   [t, c, plane](detail::Node& self) {
                     if (self.inputs[0]->requires_grad) {
                       auto& g = self.inputs[0]->grad_buf();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     }
                     if (self.inputs[1]->requires_grad) {
                       auto& gt = self.inputs[1]->grad_buf();
                       for (int64_t i = 0; i < t * c; ++i) {
                         const double* p = self.grad.data() + i * plane;
                         double acc = 0.0;
                         for (int64_t j = 0; j < plane; ++j) acc += p[j];
                         gt[static_cast<size_t>(i)] += acc;
                       }
                     }
                   },
                   "add_time_table");
}

Tensor charbonnier(const Tensor& pred, const Tensor& target, double eps) {
  check_same_shape(pred, target, "charbonnier");
  if (!(eps > 0.0)) throw ContractError("charbonnier: eps must be positive");
  const auto& pd = pred.data();
  const auto& td = target.data();
  const double e2 = eps * eps;
  double acc = 0.0;
  for (size_t i = 0; i < pd.size(); ++i) {
    const double d = pd[i] - td[i];
    acc += std::sqrt(d * d + e2);
  }
  const double inv_n = 1.0 / static_cast<double>(pd.size());
  return make_node({1}, {acc * inv_n}, {pred, target},
                   [e2, inv_n](detail::Node& self) {
                     const auto& pd2 = self.inputs[0]->data;
                     const auto& td2 = self.inputs[1]->data;
                     const double dy = self.grad[0] * inv_n;
                     for (size_t i = 0; i < pd2.size(); ++i) {
                       const double d = pd2[i] - td2[i];
                       const double g = dy * d / std::sqrt(d * d + e2);
                       if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buf()[i] += g;
                       if (self.inputs[1]->requires_grad) self.inputs[1]->grad_buf()[i] -= g;
                     }
                   },
                   "charbonnier");
}

}  // namespace vlif
