#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msn/autodiff/tensor.hpp"

namespace msn::ad {

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

/// Cross-correlation. x (B,Ci,H,W), weight (Co,Ci,kh,kw), bias (Co) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

/// x (B,Ci,L), weight (Co,Ci,k); no padding.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

/// x (B,Din), weight (Dout,Din), bias (Dout) or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// x * sigmoid(x).
Tensor silu(const Tensor& x);

struct PoolOptions {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

/// Padded cells never win. Gradient goes to the first maximum in scan order.
Tensor max_pool2d(const Tensor& x, PoolOptions opt);

/// Max over the full (H,W) extent, returned as (B,C).
Tensor global_max_pool2d(const Tensor& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

/// Per-channel normalization of (B,C) or (B,C,H,W). Training mode uses batch
/// statistics and updates the running estimates (unbiased variance).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double eps = 1e-5, double momentum = 0.1);

/// x (B*groups, C, ...) -> (B, 2C): per-channel mean then standard deviation over
/// the group axis and every trailing axis. std = sqrt(max(var, eps^2)).
Tensor stats_pool(const Tensor& x, std::size_t groups = 1, double eps = 1e-5);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// x times g, where g has x's rank and each dim equals x's or is 1.
Tensor mul_broadcast(const Tensor& x, const Tensor& g);

/// Mean over the listed axes, keeping them as size 1.
Tensor mean_axes(const Tensor& x, std::vector<std::size_t> axes);

Tensor reshape(const Tensor& x, Shape shape);

/// Concatenates rank-2 tensors along the feature axis.
Tensor concat_features(const std::vector<Tensor>& parts);

/// Row-wise x / ||x||; norms are floored at 1e-12.
Tensor l2_normalize_rows(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// sum_i x_i * w_i with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

}  // namespace msn::ad
