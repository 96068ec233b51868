#pragma once

#include "vlif/tensor.hpp"

namespace vlif {

// Elementwise arithmetic (same-shape operands).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

// x scaled by a learnable scalar (shape {1}).
Tensor scale_by(const Tensor& x, const Tensor& s);

// x * g with g broadcast; g has x's rank and every extent either 1 or equal.
Tensor broadcast_mul(const Tensor& x, const Tensor& g);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);
Tensor sigmoid(const Tensor& x);
// Pass-through gradient inside [lo, hi] (inclusive), zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// Full reductions to shape {1}.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over the listed axes, keeping rank (reduced extents become 1).
Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes);

Tensor reshape(const Tensor& x, Shape new_shape);
// Along axis 1 of rank-4 tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// x[t, ...] with the leading axis dropped / re-stacked.
Tensor select_step(const Tensor& x, int64_t t);
Tensor stack_steps(const std::vector<Tensor>& steps);

// y = x * w^T + b; x [N,K], w [M,K], b [M] (pass undefined Tensor for no bias).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation, x [N,Cin,H,W], k [Cout,Cin,kh,kw].
// Output spatial extent: floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int padding);
int64_t conv2d_macs(const Shape& x, const Shape& k, int stride, int padding);

// Per-channel bias over axis 1 of a rank-4 tensor.
Tensor bias_add(const Tensor& x, const Tensor& b);

// Per-channel batch norm over (N,H,W). Training mode normalizes by batch
// statistics and folds them into the running buffers (momentum EMA, unbiased
// variance); eval mode uses the running buffers. The epsilon floor keeps
// zero-variance channels finite.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double eps = 1e-5, double momentum = 0.1);

// Align-corners-false bilinear sampling; exact identity when sizes match.
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);

// x[t,c,:,:] + table[t,c]; x rank 4, table rank 2.
Tensor add_time_table(const Tensor& x, const Tensor& table);

// mean(sqrt((pred - target)^2 + eps^2)).
Tensor charbonnier(const Tensor& pred, const Tensor& target, double eps);

}  // namespace vlif
