#pragma once

#include <cstdint>

#include "cardiseg/autodiff.hpp"

/// Differentiable operations used by the segmentation network. All spatial
/// operations take [B,C,H,W] tensors; every op records its backward closure
/// on the input's tape.
namespace cardiseg::ops {

/// Stride-1 convolution with zero padding k/2 on each border; kernel
/// [Cout,Cin,k,k] with odd k (3 for the U-Net blocks, 1 for the head).
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias);

/// Stride-2 transposed convolution producing exactly [B,Cout,2H,2W].
/// Kernel [Cin,Cout,k,k]: k = 2 scatters without overlap; k = 3 uses
/// padding 1 with one row/column of output padding.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernel);

/// Disjoint 2x2 max pooling. Ties route the gradient to the first element in
/// row-major window order.
template <typename T>
Var<T> maxpool2(const Var<T>& input);

/// Per-channel running statistics owned by the model.
template <typename T>
struct BatchNormStats {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Train mode normalises with biased batch statistics over (B,H,W) and folds
/// them into the running statistics as `running = 0.9 * running + 0.1 * batch`.
/// Infer mode uses the running statistics.
template <typename T>
Var<T> batchnorm2d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T> stats,
                   Mode mode);

/// ELU with alpha = 1; the derivative at exactly 0 is 1.
template <typename T>
Var<T> elu(const Var<T>& input);

template <typename T>
Var<T> sigmoid(const Var<T>& input);

/// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode.
/// Infer mode (or rate 0) returns the input handle unchanged.
template <typename T>
Var<T> dropout(const Var<T>& input, double rate, Mode mode, std::uint64_t seed);

/// Channel stacking, `a` first.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// Channels [begin, begin + count).
template <typename T>
Var<T> slice_channels(const Var<T>& input, std::size_t begin, std::size_t count);

/// Sum of all elements as a [1] tensor.
template <typename T>
Var<T> sum(const Var<T>& input);

/// Sum of squared elements as a [1] tensor.
template <typename T>
Var<T> sum_squares(const Var<T>& input);

/// Elementwise product with a constant tensor of the same shape.
template <typename T>
Var<T> mul_constant(const Var<T>& input, const Tensor<T>& weights);

}  // namespace cardiseg::ops
