// Differentiable network operations on top of the autodiff tape.
//
// Layout conventions:
//   conv tensors    [N x C x T x H x W]
//   sequences       [T x N x D]   (time-major; [T x D] == N = 1)
// 2D convolutions are conv3d with a temporal kernel extent of 1.
#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "avword/autodiff.hpp"
#include "avword/rng.hpp"

namespace avword {

enum class Mode { train, eval };

struct Dims3 {
  std::size_t t = 1, h = 1, w = 1;
};

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t in_channels = 1;
  Dims3 kernel;
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};
  bool bias_enabled = true;

  void validate() const;
  // floor((L + 2p - k)/s) + 1 per axis
  Dims3 output_extent(const Dims3& in) const;
};

namespace ad {

template <typename T>
VarPtr<T> conv3d(const VarPtr<T>& input, const ConvSpec& spec, const VarPtr<T>& weights,
                 const VarPtr<T>& bias /* may be null */);

template <typename T>
VarPtr<T> maxpool3d(const VarPtr<T>& input, Dims3 kernel, Dims3 stride,
                    Dims3 padding = {0, 0, 0});

// Learned affine on the trailing axis: x[.., D] * W[D' x D]^T + b
template <typename T>
VarPtr<T> linear(const VarPtr<T>& x, const VarPtr<T>& weights,
                 const VarPtr<T>& bias /* may be null */);

// [N x C x T x H x W] -> [T x N x C*H*W] (per-frame feature flattening)
template <typename T>
VarPtr<T> conv_to_time_major(const VarPtr<T>& x);

// [T x N x C] -> [N x C x T x 1 x 1] (temporal convolution input)
template <typename T>
VarPtr<T> seq_to_conv5d(const VarPtr<T>& x);

template <typename T>
struct BatchNormState {
  std::size_t feature_count = 0;
  VarPtr<T> gamma;          // learned, [D]
  VarPtr<T> beta;           // learned, [D]
  Tensor<T> running_mean;   // [D]
  Tensor<T> running_var;    // [D]
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  Mode mode = Mode::train;

  static BatchNormState make(std::size_t features);
};

// Normalizes per channel over (N, T, H, W).
template <typename T>
VarPtr<T> batchnorm_conv(const VarPtr<T>& x, BatchNormState<T>& state);

// Normalizes per feature over (T, N).
template <typename T>
VarPtr<T> batchnorm_seq(const VarPtr<T>& x, BatchNormState<T>& state);

template <typename T>
struct SoftmaxCEOut {
  VarPtr<T> loss;           // scalar, mean over rows
  Tensor<T> posteriors;     // [N x K], rows sum to 1
};

template <typename T>
SoftmaxCEOut<T> softmax_cross_entropy(const VarPtr<T>& logits,
                                      const std::vector<std::size_t>& labels);

// One Bernoulli(1-p) mask of width D per sequence (sample), applied at every
// time step; survivors scaled by 1/(1-p). Eval mode and p == 0 are identity.
template <typename T>
VarPtr<T> dropout_shared_mask(const VarPtr<T>& seq, double p, Rng& rng, Mode mode);

}  // namespace ad

// Plain (non-differentiable) softmax over the last axis, rows sum to 1.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace avword
