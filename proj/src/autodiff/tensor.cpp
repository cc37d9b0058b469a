#include "msn/autodiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "msn/error.hpp"

namespace msn::ad {
namespace {

thread_local bool t_grad_enabled = true;
std::atomic<bool> g_checked{true};

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  require(ad::numel(shape) == values.size(), Errc::shape_mismatch,
          "tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
              " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  require(numel() == 1, Errc::shape_mismatch, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, requires_grad()); }

void Tensor::backward() const {
  Tape tape(*this);
  tape.backward();
}

Tape::Tape(const Tensor& root) : root_(root.node()) {
  require(root_ != nullptr, Errc::invalid_argument, "backward on undefined tensor");
  if (!root_->requires_grad) return;
  // Iterative post-order DFS gives parents before children.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root_.get(), 0}};
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::backward() {
  require(root_->value.size() == 1, Errc::shape_mismatch,
          "backward requires a scalar, got " + shape_str(root_->shape));
  if (!root_->requires_grad) return;
  // Intermediate grads restart from zero each pass; leaf grads accumulate.
  for (Node* n : order_)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  root_->ensure_grad()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it)
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  // Drop intermediate grads; they are not observable.
  for (Node* n : order_)
    if (!n->is_leaf()) std::vector<double>().swap(n->grad);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_checked_mode(bool on) { g_checked = on; }
bool checked_mode() { return g_checked; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn, const char* op_name) {
  require(ad::numel(shape) == value.size(), Errc::shape_mismatch,
          std::string(op_name) + ": result shape mismatch");
  if (g_checked) {
    for (double v : value)
      if (!std::isfinite(v)) fail(Errc::non_finite, std::string(op_name) + " produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool track = t_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Tensor& t) {
                       return t.defined() && t.requires_grad();
                     });
  if (track) {
    node->requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace msn::ad
