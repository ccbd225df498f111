#include "kpt/optim.hpp"

#include <cmath>

#include "kpt/errors.hpp"

namespace kpt {

Optimizer::Optimizer(std::vector<std::pair<std::string, Tensor>> params, OptimizerOptions options)
    : params_(std::move(params)) {
  if (!(options.lr > Real(0))) throw ContractError("learning rate must be positive");
  state_.options = options;
  if (options.kind == OptimizerKind::Adam) {
    for (const auto& [name, t] : params_) {
      state_.first_moment.emplace_back(t.numel(), Real(0));
      state_.second_moment.emplace_back(t.numel(), Real(0));
    }
  }
}

void Optimizer::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void Optimizer::set_lr(Real lr) {
  if (!(lr > Real(0))) throw ContractError("learning rate must be positive");
  state_.options.lr = lr;
}

void Optimizer::step() {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) throw ContractError("optimizer step: parameter '" + name + "' has no gradient");
  }
  ++state_.step;
  const auto& o = state_.options;
  if (o.kind == OptimizerKind::Sgd) {
    for (auto& [name, t] : params_) {
      auto w = t.mutable_data();
      auto g = t.grad();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= o.lr * g[i];
    }
    return;
  }
  const double t_step = static_cast<double>(state_.step);
  const Real bc1 = static_cast<Real>(1.0 - std::pow(static_cast<double>(o.beta1), t_step));
  const Real bc2 = static_cast<Real>(1.0 - std::pow(static_cast<double>(o.beta2), t_step));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto w = params_[p].second.mutable_data();
    auto g = params_[p].second.grad();
    auto& m = state_.first_moment[p];
    auto& v = state_.second_moment[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = o.beta1 * m[i] + (Real(1) - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (Real(1) - o.beta2) * g[i] * g[i];
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      w[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace kpt
