#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msn::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One value in the recorded graph. backward_fn reads this node's grad and
/// accumulates into the grads of its parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad();
};

/// Shared handle to a graph node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  /// Gradient storage; empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& grad_storage() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;
  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const;

  /// Seeds d(this)/d(this) = 1 and propagates; leaf gradients accumulate.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Topologically ordered record of every grad-carrying node reachable from a root.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  const std::vector<Node*>& order() const { return order_; }
  void backward();

 private:
  std::shared_ptr<Node> root_;
  std::vector<Node*> order_;
};

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When on (the default), every op result is scanned for NaN/Inf.
void set_checked_mode(bool on);
bool checked_mode();

/// Builds an op result. Parents and backward_fn are kept only if recording is on
/// and some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn, const char* op_name);

}  // namespace msn::ad
