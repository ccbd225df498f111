#include "kpt/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "kpt/errors.hpp"

namespace kpt {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

void Node::accumulate(std::size_t i, Real g) { ensure_grad()[i] += g; }

std::vector<Real>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad;
}

std::shared_ptr<Node> make_result(const Shape& shape, std::initializer_list<const Tensor*> inputs,
                                  const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data.assign(shape_numel(shape), Real(0));
  node->op = op;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t->defined() && t->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    }
  }
  return node;
}

std::shared_ptr<Node> make_result(const Shape& shape, const std::vector<Tensor>& inputs,
                                  const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data.assign(shape_numel(shape), Real(0));
  node->op = op;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    }
  }
  return node;
}

}  // namespace detail

Tensor Tensor::zeros(const Shape& shape) { return full(shape, Real(0)); }

Tensor Tensor::full(const Shape& shape, Real value) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->data.assign(shape_numel(shape), value);
  return Tensor(std::move(node));
}

Tensor Tensor::from(const Shape& shape, std::vector<Real> values) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value) { return full({1}, value); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const Real> Tensor::data() const { return node_->data; }

std::span<Real> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("cannot write into the result of an operation");
  return node_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a matrix, got " + shape_str(shape()));
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const Real> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::span<Real> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), Real(0)); }

bool Tensor::is_leaf() const { return node_->is_leaf(); }

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

std::vector<detail::Node*> computation_tape(const Tensor& root) {
  std::vector<detail::Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS; graphs get deep enough to overflow recursion.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + (defined() ? shape_str(shape()) : "undefined"));
  }
  if (!requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
  auto tape = computation_tape(*this);
  for (detail::Node* n : tape) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), Real(0));
  }
  node_->ensure_grad()[0] += Real(1);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (detail::Node* n : tape) {
    if (!n->is_leaf()) std::vector<Real>().swap(n->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace kpt
