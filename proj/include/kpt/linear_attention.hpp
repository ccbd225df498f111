#pragma once

#include <cstddef>
#include <span>

#include "kpt/tensor.hpp"

namespace kpt {

/// Query rows [q_begin, q_end) attend to key/value rows [k_begin, k_end).
struct AttentionSegment {
  std::size_t q_begin, q_end, k_begin, k_end;
};

/// Scratch accounting of the most recent linear_attention call on this thread.
struct LinearAttentionStats {
  std::size_t peak_scratch = 0;  // reals held at once, including saved state for backward
  std::size_t budget = 0;        // (Nq + Nk) * D + D * E + D + Nq
};

const LinearAttentionStats& last_linear_attention_stats();

/// Kernelized attention with feature map phi = elu + 1:
///   out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) . sum_j phi(k_j))
/// Cost is linear in the row counts; no Nq x Nk matrix is ever formed.
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Batched form: each segment is an independent attention problem. Optional
/// `key_weights` (one per key row) scale every key's contribution; a zero
/// weight removes the key entirely. Query rows outside all segments are zero.
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const AttentionSegment> segments,
                        std::span<const Real> key_weights = {});

}  // namespace kpt
