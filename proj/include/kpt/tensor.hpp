#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kpt/real.hpp"

namespace kpt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the computation graph. Results of differentiable ops keep
// their inputs alive and carry the local backward rule.
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads `self.grad` and accumulates into the inputs' grads.
  std::function<void(Node& self)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  void accumulate(std::size_t i, Real g);
  std::vector<Real>& ensure_grad();
};

}  // namespace detail

/// Dense row-major array of reals with optional reverse-mode gradient.
/// Copies are shallow: two Tensor handles may refer to the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, Real value);
  static Tensor from(const Shape& shape, std::vector<Real> values);
  static Tensor scalar(Real value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  /// Write access is only permitted on leaves; op results are immutable.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  /// Resets the gradient to an allocated all-zero buffer.
  void zero_grad();
  bool is_leaf() const;

  /// Fresh leaf with a copy of the values and no history.
  Tensor detach() const;

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable leaf that requires them.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered list of the graph vertices that lead to `root` and
/// require gradients; inputs precede the operations that consume them.
std::vector<detail::Node*> computation_tape(const Tensor& root);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

// Allocates an op result. Records `inputs` only when recording is enabled and
// at least one of them needs a gradient.
std::shared_ptr<Node> make_result(const Shape& shape, std::initializer_list<const Tensor*> inputs,
                                  const char* op);
std::shared_ptr<Node> make_result(const Shape& shape, const std::vector<Tensor>& inputs,
                                  const char* op);

}  // namespace detail

}  // namespace kpt
