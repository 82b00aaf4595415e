#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "layerfit/error.hpp"
#include "layerfit/rng.hpp"

namespace layerfit {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // reads this->grad, accumulates into parents

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Tape recording can be suspended (inference, metric evaluation) so long
// forward chains do not retain their history.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major f64 tensor with reverse-mode differentiation. The tape is
// rebuilt on every forward pass; a Tensor is a cheap handle onto one node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(static_cast<size_t>(shape_numel(shape)), v);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw UsageError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return filled({1}, v, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = stddev * rng.normal();
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }

  // Gradient accumulated by the most recent backward() calls.
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const {
    if (numel() != 1)
      throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  double at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
  double& at(int64_t i) { return node_->value[static_cast<size_t>(i)]; }

  Tensor detached() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    node->requires_grad = false;
    return Tensor(std::move(node));
  }

  Tensor clone_as_leaf(bool requires_grad) const {
    Tensor t = detached();
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool all_finite() const {
    for (double v : node_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Allocates the result node of an op, recording parents only when the tape
// is active and some input needs gradients. The caller attaches the pullback
// afterwards iff result.requires_grad().
inline Tensor alloc_result(Shape shape, std::vector<double> value,
                           std::initializer_list<Tensor> inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  node->requires_grad = needs;
  if (needs)
    for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
  return Tensor(std::move(node));
}

inline Tensor alloc_result(Shape shape, std::vector<double> value,
                           const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  node->requires_grad = needs;
  if (needs)
    for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
  return Tensor(std::move(node));
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every requires_grad tensor reachable from it.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS: a node ends up before everything it feeds.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw InputError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (int64_t i = 0; i < b.numel(); ++i) out[i] += b.at(i);
  Tensor r = detail::alloc_result(a.shape(), std::move(out), {a, b});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, b, n]() {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i) a.node()->grad[i] += n->grad[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i) b.node()->grad[i] += n->grad[i];
      }
    };
  }
  return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (int64_t i = 0; i < b.numel(); ++i) out[i] -= b.at(i);
  Tensor r = detail::alloc_result(a.shape(), std::move(out), {a, b});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, b, n]() {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i) a.node()->grad[i] += n->grad[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i) b.node()->grad[i] -= n->grad[i];
      }
    };
  }
  return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor r = detail::alloc_result(a.shape(), std::move(out), {a, b});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, b, n]() {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i)
          a.node()->grad[i] += n->grad[i] * b.node()->value[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i)
          b.node()->grad[i] += n->grad[i] * a.node()->value[i];
      }
    };
  }
  return r;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = c * a.at(i);
  Tensor r = detail::alloc_result(a.shape(), std::move(out), {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, c, n]() {
      a.node()->ensure_grad();
      for (size_t i = 0; i < n->grad.size(); ++i)
        a.node()->grad[i] += c * n->grad[i];
    };
  }
  return r;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = sigmoid_scalar(a.at(i));
  Tensor r = detail::alloc_result(a.shape(), std::move(out), {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, n]() {
      a.node()->ensure_grad();
      for (size_t i = 0; i < n->grad.size(); ++i) {
        double s = n->value[i];
        a.node()->grad[i] += n->grad[i] * s * (1.0 - s);
      }
    };
  }
  return r;
}

inline Tensor silu(const Tensor& a) {
  std::vector<double> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i)
    out[i] = a.at(i) * sigmoid_scalar(a.at(i));
  Tensor r = detail::alloc_result(a.shape(), std::move(out), {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, n]() {
      a.node()->ensure_grad();
      for (size_t i = 0; i < n->grad.size(); ++i) {
        double x = a.node()->value[i];
        double s = sigmoid_scalar(x);
        a.node()->grad[i] += n->grad[i] * s * (1.0 + x * (1.0 - s));
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.at(i);
  Tensor r = detail::alloc_result({1}, {s}, {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, n]() {
      a.node()->ensure_grad();
      for (double& g : a.node()->grad) g += n->grad[0];
    };
  }
  return r;
}

inline Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.at(i);
  double inv = 1.0 / static_cast<double>(a.numel());
  Tensor r = detail::alloc_result({1}, {s * inv}, {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, inv, n]() {
      a.node()->ensure_grad();
      for (double& g : a.node()->grad) g += inv * n->grad[0];
    };
  }
  return r;
}

// Mean of squared element differences.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a.at(i) - b.at(i);
    s += d * d;
  }
  double inv = 1.0 / static_cast<double>(a.numel());
  Tensor r = detail::alloc_result({1}, {s * inv}, {a, b});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, b, inv, n]() {
      double g0 = n->grad[0];
      bool ga = a.requires_grad();
      bool gb = b.requires_grad();
      if (ga) a.node()->ensure_grad();
      if (gb) b.node()->ensure_grad();
      for (size_t i = 0; i < a.node()->value.size(); ++i) {
        double d = 2.0 * inv * (a.node()->value[i] - b.node()->value[i]) * g0;
        if (ga) a.node()->grad[i] += d;
        if (gb) b.node()->grad[i] -= d;
      }
    };
  }
  return r;
}

// Euclidean norm over all elements: sqrt(sum x^2). Gradient defined as 0 at
// the origin.
inline Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.at(i) * a.at(i);
  Tensor r = detail::alloc_result({1}, {std::sqrt(s)}, {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, n]() {
      double norm = n->value[0];
      if (norm == 0.0) return;
      a.node()->ensure_grad();
      double g0 = n->grad[0] / norm;
      for (size_t i = 0; i < a.node()->value.size(); ++i)
        a.node()->grad[i] += g0 * a.node()->value[i];
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw UsageError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  Tensor r = detail::alloc_result(std::move(shape), std::move(out), {a});
  if (r.requires_grad()) {
    detail::Node* n = r.node();
    n->backprop = [a, n]() {
      a.node()->ensure_grad();
      for (size_t i = 0; i < n->grad.size(); ++i) a.node()->grad[i] += n->grad[i];
    };
  }
  return r;
}

}  // namespace layerfit
