#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kpt/tensor.hpp"

namespace kpt {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::Adam;
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

/// Learning rate, step counter and (for Adam only) the two moment buffers of
/// every parameter.
struct OptimizerState {
  OptimizerOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
};

class Optimizer {
 public:
  Optimizer(std::vector<std::pair<std::string, Tensor>> params, OptimizerOptions options = {});

  /// Updates every parameter in place from its gradient. Gradients are left
  /// untouched; call zero_grads() before the next backward pass.
  void step();
  void zero_grads();
  void set_lr(Real lr);

  const OptimizerState& state() const { return state_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  OptimizerState state_;
};

}  // namespace kpt
