#pragma once

#include <vector>

#include "hasa/tape.hpp"
#include "hasa/tensor.hpp"

namespace hasa {

struct ConvOpts {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

enum class PoolKind { max, avg, global_avg };

// Output spatial extent for a conv/pool window; throws ConfigError when the
// result would be empty.
int conv_out_extent(int in, int kernel, int stride, int padding, int dilation, const char* where);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float k);
Tensor add_const(const Tensor& a, float k);

// y = s * x with s a 1-element tensor; differentiable in both.
Tensor scale_by(const Tensor& s, const Tensor& x);
// y[n,c,h,w] = x[n,c,h,w] * gate[n,c,0,0]
Tensor scale_channels(const Tensor& x, const Tensor& gate);

// ---- shape ----
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int c0, int c1);
// y[..., i, j] = x[..., i + dy, j + dx]; output is (H - dy, W - dx).
Tensor crop_shift(const Tensor& x, int dy, int dx);

// ---- activations ----
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_channel(const Tensor& x);

// ---- structured ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvOpts& opts);
Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding);
Tensor bilinear_upsample(const Tensor& x, int factor);
// x flattened to (batch, c*h*w); w is (out, features, 1, 1), bias (1, out, 1, 1).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor* bias);
// Per-channel affine normalization over H*W (one group per channel).
Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- losses ----
// logits (batch, n_classes, 1, 1); mean over batch of -log softmax[label].
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

}  // namespace hasa
