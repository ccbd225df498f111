#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kpt/tensor.hpp"

// Differentiable operations. All of them record a backward rule when any
// input requires a gradient and recording is enabled. Shapes must match
// exactly; the only broadcast is the row-wise bias in add_bias.
namespace kpt {

// ---- linear algebra -------------------------------------------------------

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] * [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
/// x[m x n] + bias[n] added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
/// elu(x) + 1: x + 1 for x >= 0, exp(x) otherwise. Strictly positive.
Tensor elu_plus_one(const Tensor& x);
/// Saturates strictly inside (-1, 1).
Tensor tanh(const Tensor& x);

// ---- reductions and normalizations ---------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Row-wise softmax, stabilized by subtracting the row maximum.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
/// Softmax over the entries whose mask byte is non-zero; masked entries get
/// exactly zero weight. Every row needs at least one unmasked entry.
Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask);
/// Per-row layer normalization followed by gamma * x + beta.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));
/// Mean cross-entropy of row-wise softmax(logits) against class indices.
/// Rows whose target is negative are ignored; the mean runs over the rest.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// out[r] = sum_j weights[r*taps + j] * table[indices[r*taps + j]].
/// Gradients flow into `table`; indices and weights are constants.
Tensor weighted_gather(const Tensor& table, std::span<const std::size_t> indices,
                       std::span<const Real> weights, std::size_t taps);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
/// q[B x D], keys[B*J x D] -> [B x J] with out[b][j] = <q_b, keys_{b*J+j}>.
Tensor segment_dot(const Tensor& q, const Tensor& keys, std::size_t group);
/// w[B x J], values[B*J x C] -> [B x C] with out[b] = sum_j w[b][j] * values_{b*J+j}.
Tensor segment_weighted_sum(const Tensor& w, const Tensor& values);

// ---- convolution ----------------------------------------------------------

/// x[B x C x H x W] (*) w[O x C x k x k] + bias[O], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad);
/// [B x C x H x W] -> [B*H*W x C], rows ordered (b, y, x).
Tensor nchw_to_rows(const Tensor& x);

}  // namespace kpt
