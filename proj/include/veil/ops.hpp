#pragma once

#include <cstdint>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, float s);
Tensor add_scalar(const Tensor& x, float s);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Gradient passes only where the input lies strictly inside [lo, hi].
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::int64_t>& sizes);
/// Repeats `x` `times` times along a new leading axis fused into axis 0:
/// [B, ...] -> [B * times, ...] with each row repeated consecutively.
Tensor repeat_interleave(const Tensor& x, std::int64_t times);
/// Rows of a 2-D table selected by index: [N, D] x idx -> [len(idx), D].
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& idx);

// Dense algebra.
/// Batched matmul. a: [..., M, K], b: [..., K, N] with equal leading dims, or b 2-D.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a [..., M, K] times the transpose of b [..., N, K].
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
/// y = x W^T + bias over the last axis. weight: [out, in]; bias optional [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

/// Cross-correlation. input [B,C,H,W], kernel [O,C,kh,kw], bias optional [O].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias = Tensor(),
              int stride = 1, int padding = 0);
/// input [B,C,N], kernel [O,C,k], bias optional [O]; stride 1.
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias = Tensor(), int padding = 0);

// Normalization and activations.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor l2_normalize(const Tensor& x, float eps = 1e-12f);

/// Scaled dot-product attention. q [B,N,d], k [B,M,d], v [B,M,dv] -> [B,N,dv].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
/// The softmax weight matrix [B,N,M] used by attention().
Tensor attention_weights(const Tensor& q, const Tensor& k);

// Resampling on [B,C,H,W].
Tensor upsample_nearest2d(const Tensor& x, int factor = 2);
/// Non-overlapping average pooling; an axis of size 1 is left as is.
Tensor avgpool2d(const Tensor& x, int factor = 2);
/// Normalized Gaussian blur with replicate padding.
Tensor gaussian_blur2d(const Tensor& x, int ksize = 5, float sigma = 1.0f);
/// Bilinear resample (half-pixel centers, edge clamped). Not differentiable.
Tensor resize_bilinear(const Tensor& x, std::int64_t height, std::int64_t width);

/// Video layouts. Input is always [b, n, c, h, w].
enum class VideoLayout { spatial, temporal_conv, temporal_attn };

struct VideoDims {
  std::int64_t b = 1, n = 1, c = 1, h = 1, w = 1;
  static VideoDims of(const Tensor& video);
};

/// spatial -> [b*n, c, h, w]; temporal_conv -> [b*h*w, c, n]; temporal_attn -> [b*h*w, n, c].
Tensor rearrange_video(const Tensor& x, VideoLayout mode);
/// Exact inverse of rearrange_video for the given original dims.
Tensor restore_video(const Tensor& x, VideoLayout mode, const VideoDims& dims);

}  // namespace veil
