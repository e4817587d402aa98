#pragma once

// Differentiable primitives. Matrices are rank-2 row-major tensors; "batched"
// ops treat a [batch*r x c] matrix as `batch` stacked segments of r rows each,
// which is how a mini-batch of token sequences travels through the model.

#include <cstddef>
#include <cstdint>
#include <span>

#include "sinformer/tensor.hpp"

namespace sinformer::nn {

/// C = A * B. Throws DimensionError naming both shapes when inner dims differ.
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Segment-wise product: A is [batch*r x k]; B is [batch*k x c], or
/// [batch*c x k] when transpose_b is set (giving A_i * B_i^T).
template <typename T>
Tensor<T> batched_matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, std::size_t batch,
                         bool transpose_b);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);

/// X + 1 * b^T: adds a length-c vector to every row of an r x c matrix.
template <typename T>
Tensor<T> add_row_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);

/// sum_i weights[i] * terms[i] over scalar terms.
template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, std::span<const Tensor<T>> terms, std::span<const T> weights);

/// Cross-correlation along the row (token) axis with zero padding.
/// input [batch*n x c_in], kernel [k x c_in x c_out], bias [c_out] ->
/// [batch*n_out x c_out] with n_out = (n + pad_left + pad_right - k) / stride + 1.
template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad_left, std::size_t pad_right, std::size_t batch = 1);

/// Per-channel variant of conv1d: kernel [k x c], bias [c].
template <typename T>
Tensor<T> depthwise_conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                           const Tensor<T>& bias, std::size_t stride, std::size_t pad_left,
                           std::size_t pad_right, std::size_t batch = 1);

/// Row-wise softmax with max subtraction. Rejects non-finite input.
template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& m);

/// Row-wise layer normalization with population variance.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// x * Phi(x) with the exact erf-based normal CDF.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& x, std::size_t begin, std::size_t count);

/// [batch*n x c] -> [batch x c], averaging each segment's rows.
template <typename T>
Tensor<T> segment_mean(Tape<T>& tape, const Tensor<T>& x, std::size_t batch);

/// Rows with mask[i] != 0 are replaced by `token` (length c); others pass through.
template <typename T>
Tensor<T> replace_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::uint8_t> mask,
                       const Tensor<T>& token);

/// Row i comes from `when_set` if mask[i] != 0, otherwise from `when_clear`.
template <typename T>
Tensor<T> select_rows(Tape<T>& tape, std::span<const std::uint8_t> mask, const Tensor<T>& when_set,
                      const Tensor<T>& when_clear);

/// Dense transpose helper shared by ops and model code.
template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, T* dst);

}  // namespace sinformer::nn
