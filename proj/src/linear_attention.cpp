#include "kpt/linear_attention.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "kpt/errors.hpp"

namespace kpt {

namespace {

thread_local LinearAttentionStats g_stats;

Real phi(Real x) { return x >= Real(0) ? x + Real(1) : std::exp(x); }
Real phi_grad(Real x, Real phi_x) { return x >= Real(0) ? Real(1) : phi_x; }

// Every buffer goes through this ledger; exceeding the linear budget means an
// accidental quadratic allocation crept in.
class ScratchLedger {
 public:
  explicit ScratchLedger(std::size_t budget) : budget_(budget) {}
  std::vector<Real> take(std::size_t n) {
    in_use_ += n;
    if (in_use_ > budget_) {
      throw ContractError("linear_attention scratch " + std::to_string(in_use_) + " exceeds linear budget " +
                          std::to_string(budget_));
    }
    peak_ = std::max(peak_, in_use_);
    return std::vector<Real>(n, Real(0));
  }
  void give_back(std::size_t n) { in_use_ -= n; }
  std::size_t peak() const { return peak_; }

 private:
  std::size_t budget_;
  std::size_t in_use_ = 0;
  std::size_t peak_ = 0;
};

}  // namespace

const LinearAttentionStats& last_linear_attention_stats() { return g_stats; }

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2) throw DimensionError("linear_attention: Q and K must be matrices");
  const AttentionSegment whole{0, q.dim(0), 0, k.dim(0)};
  return linear_attention(q, k, v, std::span<const AttentionSegment>(&whole, 1));
}

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const AttentionSegment> segments,
                        std::span<const Real> key_weights) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("linear_attention: Q, K, V must be matrices");
  }
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1), e = v.dim(1);
  if (k.dim(1) != d) {
    throw DimensionError("linear_attention: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                         " widths differ");
  }
  if (v.dim(0) != nk) {
    throw DimensionError("linear_attention: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) +
                         " row counts differ");
  }
  if (!key_weights.empty() && key_weights.size() != nk) {
    throw DimensionError("linear_attention: need one key weight per key row");
  }
  for (const auto& s : segments) {
    if (s.q_begin > s.q_end || s.q_end > nq || s.k_begin >= s.k_end || s.k_end > nk) {
      throw DimensionError("linear_attention: segment out of range or with no keys");
    }
  }

  ScratchLedger ledger((nq + nk) * d + d * e + d + nq);
  auto out = detail::make_result({nq, e}, {&q, &k, &v}, "linear_attention");
  const Real* Q = q.data().data();
  const Real* K = k.data().data();
  const Real* V = v.data().data();
  auto weight = [&](std::size_t j) { return key_weights.empty() ? Real(1) : key_weights[j]; };

  std::vector<Real> phi_q = ledger.take(nq * d);
  std::vector<Real> phi_k = ledger.take(nk * d);
  std::vector<Real> den = ledger.take(nq);
  for (std::size_t i = 0; i < nq * d; ++i) phi_q[i] = phi(Q[i]);
  for (std::size_t i = 0; i < nk * d; ++i) phi_k[i] = phi(K[i]);

  {
    std::vector<Real> kv = ledger.take(d * e);
    std::vector<Real> ks = ledger.take(d);
    for (const auto& s : segments) {
      std::fill(kv.begin(), kv.end(), Real(0));
      std::fill(ks.begin(), ks.end(), Real(0));
      for (std::size_t j = s.k_begin; j < s.k_end; ++j) {
        const Real w = weight(j);
        if (w == Real(0)) continue;
        for (std::size_t a = 0; a < d; ++a) {
          const Real pk = w * phi_k[j * d + a];
          ks[a] += pk;
          Real* row = kv.data() + a * e;
          for (std::size_t c = 0; c < e; ++c) row[c] += pk * V[j * e + c];
        }
      }
      for (std::size_t i = s.q_begin; i < s.q_end; ++i) {
        const Real* pq = phi_q.data() + i * d;
        Real dn = 0;
        for (std::size_t a = 0; a < d; ++a) dn += pq[a] * ks[a];
        if (dn <= Real(0)) throw ContractError("linear_attention: segment has no weighted keys");
        den[i] = dn;
        Real* o = out->data.data() + i * e;
        for (std::size_t a = 0; a < d; ++a) {
          const Real* row = kv.data() + a * e;
          for (std::size_t c = 0; c < e; ++c) o[c] += pq[a] * row[c];
        }
        for (std::size_t c = 0; c < e; ++c) o[c] /= dn;
      }
    }
    ledger.give_back(d * e + d);
  }
  g_stats = {ledger.peak(), (nq + nk) * d + d * e + d + nq};

  if (out->requires_grad) {
    std::vector<AttentionSegment> segs(segments.begin(), segments.end());
    std::vector<Real> kw(key_weights.begin(), key_weights.end());
    out->backward = [nq, nk, d, e, segs = std::move(segs), kw = std::move(kw), phi_q = std::move(phi_q),
                     phi_k = std::move(phi_k), den = std::move(den)](detail::Node& self) {
      auto& QN = self.inputs[0];
      auto& KN = self.inputs[1];
      auto& VN = self.inputs[2];
      const Real* G = self.grad.data();
      const Real* Y = self.data.data();
      const Real* V = VN->data.data();
      Real* gq = QN->requires_grad ? QN->ensure_grad().data() : nullptr;
      Real* gk = KN->requires_grad ? KN->ensure_grad().data() : nullptr;
      Real* gv = VN->requires_grad ? VN->ensure_grad().data() : nullptr;
      auto weight = [&](std::size_t j) { return kw.empty() ? Real(1) : kw[j]; };

      // Saved phi(Q), phi(K) and den already count against the forward budget.
      ScratchLedger ledger(2 * d * e + 2 * d + e);
      std::vector<Real> kv = ledger.take(d * e);
      std::vector<Real> ks = ledger.take(d);
      std::vector<Real> dkv = ledger.take(d * e);
      std::vector<Real> dks = ledger.take(d);
      std::vector<Real> dnum = ledger.take(e);
      for (const auto& s : segs) {
        std::fill(kv.begin(), kv.end(), Real(0));
        std::fill(ks.begin(), ks.end(), Real(0));
        std::fill(dkv.begin(), dkv.end(), Real(0));
        std::fill(dks.begin(), dks.end(), Real(0));
        for (std::size_t j = s.k_begin; j < s.k_end; ++j) {
          const Real w = weight(j);
          if (w == Real(0)) continue;
          for (std::size_t a = 0; a < d; ++a) {
            const Real pk = w * phi_k[j * d + a];
            ks[a] += pk;
            for (std::size_t c = 0; c < e; ++c) kv[a * e + c] += pk * V[j * e + c];
          }
        }
        // out_i = num_i / den_i with num_i = phi_q_i KV and den_i = phi_q_i . ks
        for (std::size_t i = s.q_begin; i < s.q_end; ++i) {
          const Real* gi = G + i * e;
          const Real* yi = Y + i * e;
          Real gy = 0;
          for (std::size_t c = 0; c < e; ++c) {
            dnum[c] = gi[c] / den[i];
            gy += gi[c] * yi[c];
          }
          const Real dden = -gy / den[i];
          const Real* pq = phi_q.data() + i * d;
          for (std::size_t a = 0; a < d; ++a) {
            const Real* kva = kv.data() + a * e;
            Real dpq = dden * ks[a];
            for (std::size_t c = 0; c < e; ++c) {
              dpq += kva[c] * dnum[c];
              dkv[a * e + c] += pq[a] * dnum[c];
            }
            dks[a] += dden * pq[a];
            if (gq) gq[i * d + a] += dpq * phi_grad(QN->data[i * d + a], pq[a]);
          }
        }
        for (std::size_t j = s.k_begin; j < s.k_end; ++j) {
          const Real w = weight(j);
          if (w == Real(0)) continue;
          const Real* vj = V + j * e;
          for (std::size_t a = 0; a < d; ++a) {
            const Real pk = phi_k[j * d + a];
            if (gk) {
              Real dpk = dks[a];
              for (std::size_t c = 0; c < e; ++c) dpk += dkv[a * e + c] * vj[c];
              gk[j * d + a] += w * dpk * phi_grad(KN->data[j * d + a], pk);
            }
            if (gv) {
              for (std::size_t c = 0; c < e; ++c) gv[j * e + c] += w * pk * dkv[a * e + c];
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

}  // namespace kpt
