#pragma once

#include <cstddef>
#include <vector>

#include "kpt/real.hpp"

// Accumulating dense kernels, row-major. Loop orders keep the innermost loop
// contiguous so the compiler can vectorize it.
namespace kpt::kernels {

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a,
                    const Real* __restrict b, Real* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict ci = c + i * n;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      if (av == Real(0)) continue;
      const Real* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a,
                    const Real* __restrict b, Real* __restrict c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* ap = a + p * m;
    const Real* __restrict bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = ap[i];
      if (av == Real(0)) continue;
      Real* __restrict ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

inline void transpose(std::size_t rows, std::size_t cols, const Real* __restrict src, Real* __restrict dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  std::vector<Real> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace kpt::kernels
