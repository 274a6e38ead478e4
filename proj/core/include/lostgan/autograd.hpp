#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lostgan/tensor.hpp"

// Minimal tape-free reverse-mode differentiation. Every operation produces a
// node holding its value, its inputs and a closure that pushes the node's
// gradient into the inputs. Graphs are only recorded while gradient mode is
// enabled (thread-local) and at least one input requires a gradient.
namespace lostgan::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Gradient buffer, zero-initialised to the value's shape when absent.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  // Gradient tensor; zeros if nothing has been accumulated yet.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the result node for an operation. The closure receives the result
// node; inputs are reachable through node.inputs in the order given.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Accumulates d(root)/d(leaf) into every reachable leaf that requires a
// gradient. `root` must hold a single element.
void backward(const Var& root);

// Leaf copy of the value with no history.
Var detach(const Var& v);

}  // namespace lostgan::ag
