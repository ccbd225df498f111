#include "kpt/nn.hpp"

#include <cmath>

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

Tensor ParamStore::insert(const std::string& name, Tensor t) {
  if (contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::create_uniform(const std::string& name, const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return insert(name, Tensor::from(shape, std::move(values)));
}

Tensor ParamStore::create_constant(const std::string& name, const Shape& shape, Real value) {
  return insert(name, Tensor::full(shape, value));
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter '" + name + "'");
}

std::vector<std::pair<std::string, Tensor>> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& e : entries_)
    if (e.first.starts_with(prefix)) out.push_back(e);
  return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool on) {
  for (auto& [n, t] : entries_) {
    if (!n.starts_with(prefix)) continue;
    t.set_requires_grad(on);
    if (!on) std::vector<Real>().swap(t.node()->grad);
  }
}

void ParamStore::zero_grads() {
  for (auto& [n, t] : entries_)
    if (t.requires_grad()) t.zero_grad();
}

MlpParams make_mlp(ParamStore& store, const std::string& prefix, const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw DimensionError("an MLP needs at least input and output widths");
  MlpParams p;
  p.widths = widths;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string base = prefix + ".l" + std::to_string(i);
    p.weights.push_back(store.create_uniform(base + ".weight", {widths[i], widths[i + 1]}, widths[i], rng));
    p.biases.push_back(store.create_uniform(base + ".bias", {widths[i + 1]}, widths[i], rng));
  }
  return p;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

Tensor mlp_forward(const Tensor& x, const MlpParams& params) {
  if (x.rank() != 2 || x.dim(1) != params.in_dim()) {
    throw DimensionError("mlp_forward: input " + shape_str(x.shape()) + " does not match input width " +
                         std::to_string(params.in_dim()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    if (params.weights[i].dim(0) != h.dim(1)) {
      throw DimensionError("mlp_forward: layer " + std::to_string(i) + " expects width " +
                           std::to_string(params.weights[i].dim(0)) + ", got " + std::to_string(h.dim(1)));
    }
    h = linear(h, params.weights[i], params.biases[i]);
    if (i + 1 < params.weights.size()) h = relu(h);
  }
  return h;
}

}  // namespace kpt
