#include "kpt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kernels.hpp"
#include "kpt/errors.hpp"

namespace kpt {

using detail::make_result;
using detail::Node;

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be a matrix, got " +
                         (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

Real* grad_of(const std::shared_ptr<Node>& n) { return n->ensure_grad().data(); }

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto out = make_result(x.shape(), {&x}, name);
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out->data[i] = fwd(in[i]);
  if (out->requires_grad) {
    out->backward = [deriv](Node& self) {
      auto& src = self.inputs[0];
      Real* g = grad_of(src);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * deriv(src->data[i], self.data[i]);
    };
  }
  return Tensor(out);
}

}  // namespace

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " disagree");
  }
  auto out = make_result({m, n}, {&a, &b}, "matmul");
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out->data.data());
  if (out->requires_grad) {
    out->backward = [m, n, k](Node& self) {
      auto& A = self.inputs[0];
      auto& B = self.inputs[1];
      if (wants_grad(A)) kernels::gemm_nt(m, k, n, self.grad.data(), B->data.data(), grad_of(A));
      if (wants_grad(B)) kernels::gemm_tn(k, n, m, A->data.data(), self.grad.data(), grad_of(B));
    };
  }
  return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: row widths of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " disagree");
  }
  auto out = make_result({m, n}, {&a, &b}, "matmul_nt");
  kernels::gemm_nt(m, n, k, a.data().data(), b.data().data(), out->data.data());
  if (out->requires_grad) {
    out->backward = [m, n, k](Node& self) {
      auto& A = self.inputs[0];
      auto& B = self.inputs[1];
      // C = A B^T: dA = dC B, dB = dC^T A
      if (wants_grad(A)) kernels::gemm_nn(m, k, n, self.grad.data(), B->data.data(), grad_of(A));
      if (wants_grad(B)) kernels::gemm_tn(n, k, m, self.grad.data(), A->data.data(), grad_of(B));
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose input");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto out = make_result({c, r}, {&a}, "transpose");
  kernels::transpose(r, c, a.data().data(), out->data.data());
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    };
  }
  return Tensor(out);
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = make_result(a.shape(), {&a, &b}, "add");
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] + y[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      for (auto& in : self.inputs) {
        if (!wants_grad(in)) continue;
        Real* g = grad_of(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto out = make_result(a.shape(), {&a, &b}, "sub");
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] - y[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      if (wants_grad(self.inputs[0])) {
        Real* g = grad_of(self.inputs[0]);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
      if (wants_grad(self.inputs[1])) {
        Real* g = grad_of(self.inputs[1]);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = make_result(a.shape(), {&a, &b}, "mul");
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * y[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& A = self.inputs[0];
      auto& B = self.inputs[1];
      // Read both operands before writing: A and B may be the same node.
      const std::size_t n = self.grad.size();
      if (wants_grad(A)) {
        Real* g = grad_of(A);
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * B->data[i];
      }
      if (wants_grad(B)) {
        Real* g = grad_of(B);
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * A->data[i];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, Real factor) {
  auto out = make_result(a.shape(), {&a}, "scale");
  const auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * factor;
  if (out->requires_grad) {
    out->backward = [factor](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    };
  }
  return Tensor(out);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  auto out = make_result(x.shape(), {&x, &bias}, "add_bias");
  const auto in = x.data(), b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = in[i * n + j] + b[j];
  if (out->requires_grad) {
    out->backward = [m, n](Node& self) {
      if (wants_grad(self.inputs[0])) {
        Real* g = grad_of(self.inputs[0]);
        for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
      }
      if (wants_grad(self.inputs[1])) {
        Real* g = grad_of(self.inputs[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    };
  }
  return Tensor(out);
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](Real v) { return v < Real(0) ? Real(0) : v; },  // NaN passes through
      [](Real in, Real) { return in > Real(0) ? Real(1) : Real(0); });
}

Tensor elu_plus_one(const Tensor& x) {
  return unary(
      x, "elu_plus_one", [](Real v) { return v >= Real(0) ? v + Real(1) : std::exp(v); },
      [](Real in, Real out) { return in >= Real(0) ? Real(1) : out; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh",
      [](Real v) {
        // Rounding would otherwise reach +-1 exactly once |v| exceeds ~9 in float.
        const Real edge = std::nextafter(Real(1), Real(0));
        return std::clamp(std::tanh(v), -edge, edge);
      },
      [](Real, Real out) { return Real(1) - out * out; });
}

// ---- reductions and normalizations ---------------------------------------

Tensor sum(const Tensor& x) {
  auto out = make_result({1}, {&x}, "sum");
  double acc = 0;
  for (Real v : x.data()) acc += v;
  out->data[0] = static_cast<Real>(acc);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      const std::size_t n = self.inputs[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.numel())); }

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = make_result(x.shape(), {&x}, "softmax_rows");
  const auto in = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = in.data() + i * n;
    Real* o = out->data.data() + i * n;
    const Real mx = *std::max_element(row, row + n);
    Real total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  if (out->requires_grad) {
    out->backward = [m, n](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < m; ++i) {
        const Real* y = self.data.data() + i * n;
        const Real* gy = self.grad.data() + i * n;
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return Tensor(out);
}

Tensor log_softmax_rows(const Tensor& x) {
  require_matrix(x, "log_softmax_rows input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = make_result(x.shape(), {&x}, "log_softmax_rows");
  const auto in = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = in.data() + i * n;
    const Real mx = *std::max_element(row, row + n);
    Real total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const Real lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = row[j] - lse;
  }
  if (out->requires_grad) {
    out->backward = [m, n](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < m; ++i) {
        const Real* y = self.data.data() + i * n;
        const Real* gy = self.grad.data() + i * n;
        Real total = 0;
        for (std::size_t j = 0; j < n; ++j) total += gy[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += gy[j] - std::exp(y[j]) * total;
      }
    };
  }
  return Tensor(out);
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_matrix(x, "masked_softmax_rows input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (mask.size() != m * n) throw DimensionError("masked_softmax_rows: mask size does not match " + shape_str(x.shape()));
  auto out = make_result(x.shape(), {&x}, "masked_softmax_rows");
  const auto in = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask[i * n + j]) mx = std::max(mx, in[i * n + j]);
    if (!std::isfinite(mx)) throw ContractError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
    Real total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const Real e = mask[i * n + j] ? std::exp(in[i * n + j] - mx) : Real(0);
      out->data[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] /= total;
  }
  if (out->requires_grad) {
    // Masked entries have y == 0, so the plain softmax rule zeroes their gradient.
    out->backward = [m, n](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < m; ++i) {
        const Real* y = self.data.data() + i * n;
        const Real* gy = self.grad.data() + i * n;
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return Tensor(out);
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_matrix(x, "layer_norm_rows input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm_rows: scale/offset must have " + std::to_string(n) + " entries");
  }
  auto out = make_result(x.shape(), {&x, &gamma, &beta}, "layer_norm_rows");
  std::vector<Real> xhat(m * n), inv_std(m);
  const auto in = x.data(), ga = gamma.data(), be = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = in.data() + i * n;
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(n);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out->data[i * n + j] = ga[j] * xhat[i * n + j] + be[j];
    }
  }
  if (out->requires_grad) {
    out->backward = [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      auto& X = self.inputs[0];
      auto& G = self.inputs[1];
      auto& B = self.inputs[2];
      if (wants_grad(G) || wants_grad(B)) {
        Real* gg = wants_grad(G) ? grad_of(G) : nullptr;
        Real* gb = wants_grad(B) ? grad_of(B) : nullptr;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const Real gy = self.grad[i * n + j];
            if (gg) gg[j] += gy * xhat[i * n + j];
            if (gb) gb[j] += gy;
          }
      }
      if (wants_grad(X)) {
        Real* gx = grad_of(X);
        const Real inv_n = Real(1) / static_cast<Real>(n);
        for (std::size_t i = 0; i < m; ++i) {
          Real s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const Real d = self.grad[i * n + j] * G->data[j];
            s1 += d;
            s2 += d * xhat[i * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const Real d = self.grad[i * n + j] * G->data[j];
            gx[i * n + j] += inv_std[i] * (d - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy logits");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) +
                         " rows");
  }
  std::size_t valid = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(n)) throw ContractError("cross_entropy: target " + std::to_string(t) + " out of range");
    if (t >= 0) ++valid;
  }
  if (valid == 0) throw ContractError("cross_entropy: no row has a target");
  auto out = make_result({1}, {&logits}, "cross_entropy");
  std::vector<Real> prob(m * n);
  const auto in = logits.data();
  double loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = in.data() + i * n;
    const Real mx = *std::max_element(row, row + n);
    Real total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (prob[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) prob[i * n + j] /= total;
    if (targets[i] >= 0) loss += (mx + std::log(total)) - row[targets[i]];
  }
  out->data[0] = static_cast<Real>(loss / static_cast<double>(valid));
  if (out->requires_grad) {
    std::vector<int> tgt(targets.begin(), targets.end());
    out->backward = [m, n, valid, prob = std::move(prob), tgt = std::move(tgt)](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      const Real s = self.grad[0] / static_cast<Real>(valid);
      for (std::size_t i = 0; i < m; ++i) {
        if (tgt[i] < 0) continue;
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += s * prob[i * n + j];
        g[i * n + static_cast<std::size_t>(tgt[i])] -= s;
      }
    };
  }
  return Tensor(out);
}

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto out = make_result(shape, {&x}, "reshape");
  std::copy(x.data().begin(), x.data().end(), out->data.begin());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  std::size_t rows = 0;
  const std::size_t cols = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows part");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column counts differ (" + shape_str(p.shape()) + ")");
    rows += p.dim(0);
  }
  auto out = make_result({rows, cols}, parts, "concat_rows");
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p.numel();
  }
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      std::size_t at = 0;
      for (auto& in : self.inputs) {
        const std::size_t n = in->data.size();
        if (wants_grad(in)) {
          Real* g = grad_of(in);
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[at + i];
        }
        at += n;
      }
    };
  }
  return Tensor(out);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols lhs");
  require_matrix(b, "concat_cols rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: row counts of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
  }
  const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1), n = na + nb;
  auto out = make_result({m, n}, {&a, &b}, "concat_cols");
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * na, na, out->data.data() + i * n);
    std::copy_n(b.data().data() + i * nb, nb, out->data.data() + i * n + na);
  }
  if (out->requires_grad) {
    out->backward = [m, na, nb, n](Node& self) {
      if (wants_grad(self.inputs[0])) {
        Real* g = grad_of(self.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
      }
      if (wants_grad(self.inputs[1])) {
        Real* g = grad_of(self.inputs[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
      }
    };
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows input");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  auto out = make_result({end - begin, n}, {&x}, "slice_rows");
  std::copy_n(x.data().data() + begin * n, (end - begin) * n, out->data.data());
  if (out->requires_grad) {
    out->backward = [begin, n](Node& self) {
      Real* g = grad_of(self.inputs[0]) + begin * n;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols input");
  if (begin >= end || end > x.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
  auto out = make_result({m, w}, {&x}, "slice_cols");
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data().data() + i * n + begin, w, out->data.data() + i * w);
  if (out->requires_grad) {
    out->backward = [m, n, w, begin](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    };
  }
  return Tensor(out);
}

Tensor weighted_gather(const Tensor& table, std::span<const std::size_t> indices, std::span<const Real> weights,
                       std::size_t taps) {
  require_matrix(table, "weighted_gather table");
  if (taps == 0 || indices.size() != weights.size() || indices.size() % taps != 0 || indices.empty()) {
    throw DimensionError("weighted_gather: indices/weights must be equal, non-empty multiples of taps");
  }
  const std::size_t rows = table.dim(0), d = table.dim(1), k = indices.size() / taps;
  for (std::size_t idx : indices) {
    if (idx >= rows) throw DimensionError("weighted_gather: index " + std::to_string(idx) + " out of " + std::to_string(rows));
  }
  auto out = make_result({k, d}, {&table}, "weighted_gather");
  const Real* src = table.data().data();
  for (std::size_t r = 0; r < k; ++r) {
    Real* o = out->data.data() + r * d;
    for (std::size_t t = 0; t < taps; ++t) {
      const Real w = weights[r * taps + t];
      const Real* s = src + indices[r * taps + t] * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += w * s[j];
    }
  }
  if (out->requires_grad) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::vector<Real> wts(weights.begin(), weights.end());
    out->backward = [k, d, taps, idx = std::move(idx), wts = std::move(wts)](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t r = 0; r < k; ++r) {
        const Real* go = self.grad.data() + r * d;
        for (std::size_t t = 0; t < taps; ++t) {
          const Real w = wts[r * taps + t];
          Real* gs = g + idx[r * taps + t] * d;
          for (std::size_t j = 0; j < d; ++j) gs[j] += w * go[j];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  std::vector<Real> ones(indices.size(), Real(1));
  return weighted_gather(table, indices, ones, 1);
}

Tensor segment_dot(const Tensor& q, const Tensor& keys, std::size_t group) {
  require_matrix(q, "segment_dot queries");
  require_matrix(keys, "segment_dot keys");
  const std::size_t b = q.dim(0), d = q.dim(1);
  if (group == 0 || keys.dim(0) != b * group || keys.dim(1) != d) {
    throw DimensionError("segment_dot: keys " + shape_str(keys.shape()) + " incompatible with queries " +
                         shape_str(q.shape()) + " in groups of " + std::to_string(group));
  }
  auto out = make_result({b, group}, {&q, &keys}, "segment_dot");
  const Real* qd = q.data().data();
  const Real* kd = keys.data().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < group; ++j) {
      Real acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += qd[i * d + c] * kd[(i * group + j) * d + c];
      out->data[i * group + j] = acc;
    }
  if (out->requires_grad) {
    out->backward = [b, d, group](Node& self) {
      auto& Q = self.inputs[0];
      auto& K = self.inputs[1];
      Real* gq = wants_grad(Q) ? grad_of(Q) : nullptr;
      Real* gk = wants_grad(K) ? grad_of(K) : nullptr;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < group; ++j) {
          const Real go = self.grad[i * group + j];
          const std::size_t kr = (i * group + j) * d;
          for (std::size_t c = 0; c < d; ++c) {
            if (gq) gq[i * d + c] += go * K->data[kr + c];
            if (gk) gk[kr + c] += go * Q->data[i * d + c];
          }
        }
    };
  }
  return Tensor(out);
}

Tensor segment_weighted_sum(const Tensor& w, const Tensor& values) {
  require_matrix(w, "segment_weighted_sum weights");
  require_matrix(values, "segment_weighted_sum values");
  const std::size_t b = w.dim(0), group = w.dim(1), c = values.dim(1);
  if (values.dim(0) != b * group) {
    throw DimensionError("segment_weighted_sum: values " + shape_str(values.shape()) + " incompatible with weights " +
                         shape_str(w.shape()));
  }
  auto out = make_result({b, c}, {&w, &values}, "segment_weighted_sum");
  const Real* wd = w.data().data();
  const Real* vd = values.data().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < group; ++j)
      for (std::size_t k = 0; k < c; ++k) out->data[i * c + k] += wd[i * group + j] * vd[(i * group + j) * c + k];
  if (out->requires_grad) {
    out->backward = [b, group, c](Node& self) {
      auto& W = self.inputs[0];
      auto& V = self.inputs[1];
      Real* gw = wants_grad(W) ? grad_of(W) : nullptr;
      Real* gv = wants_grad(V) ? grad_of(V) : nullptr;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < group; ++j)
          for (std::size_t k = 0; k < c; ++k) {
            const Real go = self.grad[i * c + k];
            if (gw) gw[i * group + j] += go * V->data[(i * group + j) * c + k];
            if (gv) gv[(i * group + j) * c + k] += go * W->data[i * group + j];
          }
    };
  }
  return Tensor(out);
}

// ---- convolution ----------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, h, w, out_ch, k, stride, pad, oh, ow;
  std::size_t patch() const { return in_ch * k * k; }
  std::size_t pixels() const { return oh * ow; }
};

// cols[(c*k + ky)*k + kx][oy*ow + ox] = x[c][oy*s + ky - pad][ox*s + kx - pad]
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        Real* row = cols + ((c * g.k + ky) * g.k + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : Real(0);
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const Real* cols, Real* gx) {
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Real* row = cols + ((c * g.k + ky) * g.k + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            gx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d: expects x[BxCxHxW] and w[OxCxkxk], got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
  }
  if (bias.numel() != w.dim(0)) throw DimensionError("conv2d: bias must have one entry per output channel");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) throw DimensionError("conv2d: kernel larger than padded input");
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;

  auto out = make_result({g.batch, g.out_ch, g.oh, g.ow}, {&x, &w, &bias}, "conv2d");
  const std::size_t in_stride = g.in_ch * g.h * g.w;
  const std::size_t out_stride = g.out_ch * g.pixels();
  std::vector<Real> cols(g.batch * g.patch() * g.pixels());
  for (std::size_t b = 0; b < g.batch; ++b) {
    Real* cb = cols.data() + b * g.patch() * g.pixels();
    im2col(g, x.data().data() + b * in_stride, cb);
    Real* ob = out->data.data() + b * out_stride;
    for (std::size_t o = 0; o < g.out_ch; ++o) std::fill_n(ob + o * g.pixels(), g.pixels(), bias.data()[o]);
    kernels::gemm_nn(g.out_ch, g.pixels(), g.patch(), w.data().data(), cb, ob);
  }
  if (out->requires_grad) {
    out->backward = [g, in_stride, out_stride, cols = std::move(cols)](Node& self) {
      auto& X = self.inputs[0];
      auto& W = self.inputs[1];
      auto& B = self.inputs[2];
      std::vector<Real> dcols(X->requires_grad ? g.patch() * g.pixels() : 0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const Real* gout = self.grad.data() + b * out_stride;
        if (wants_grad(B)) {
          Real* gb = grad_of(B);
          for (std::size_t o = 0; o < g.out_ch; ++o)
            for (std::size_t p = 0; p < g.pixels(); ++p) gb[o] += gout[o * g.pixels() + p];
        }
        if (wants_grad(W)) {
          kernels::gemm_nt(g.out_ch, g.patch(), g.pixels(), gout, cols.data() + b * g.patch() * g.pixels(), grad_of(W));
        }
        if (wants_grad(X)) {
          std::fill(dcols.begin(), dcols.end(), Real(0));
          kernels::gemm_tn(g.patch(), g.pixels(), g.out_ch, W->data.data(), gout, dcols.data());
          col2im_add(g, dcols.data(), grad_of(X) + b * in_stride);
        }
      }
    };
  }
  return Tensor(out);
}

Tensor nchw_to_rows(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("nchw_to_rows: expects a 4-d tensor, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto out = make_result({b * hw, c}, {&x}, "nchw_to_rows");
  const Real* in = x.data().data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out->data[(n * hw + p) * c + ch] = in[(n * c + ch) * hw + p];
  if (out->requires_grad) {
    out->backward = [b, c, hw](Node& self) {
      Real* g = grad_of(self.inputs[0]);
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < hw; ++p) g[(n * c + ch) * hw + p] += self.grad[(n * hw + p) * c + ch];
    };
  }
  return Tensor(out);
}

}  // namespace kpt
