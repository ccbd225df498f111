#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kpt/tensor.hpp"

namespace kpt {

using Rng = std::mt19937_64;

/// Ordered registry of named, trainable leaves. Insertion order is the
/// checkpoint order.
class ParamStore {
 public:
  /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
  Tensor create_uniform(const std::string& name, const Shape& shape, std::size_t fan_in, Rng& rng);
  Tensor create_constant(const std::string& name, const Shape& shape, Real value);

  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const;

  /// Toggles requires_grad on every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool on);
  void zero_grads();

 private:
  Tensor insert(const std::string& name, Tensor t);
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Affine layers with ReLU between them and nothing after the last one.
struct MlpParams {
  std::vector<std::size_t> widths;
  std::vector<Tensor> weights;  // [widths[i] x widths[i+1]]
  std::vector<Tensor> biases;   // [widths[i+1]]

  std::size_t in_dim() const { return widths.front(); }
  std::size_t out_dim() const { return widths.back(); }
};

MlpParams make_mlp(ParamStore& store, const std::string& prefix, const std::vector<std::size_t>& widths, Rng& rng);

/// x[n x d_in] -> [n x d_out]
Tensor mlp_forward(const Tensor& x, const MlpParams& params);

/// Affine map x * w + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace kpt
