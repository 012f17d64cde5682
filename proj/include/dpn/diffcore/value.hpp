#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dpn {

/// Raised when a caller breaks a documented precondition (shape mismatch,
/// non-scalar backward root, stepping a finished episode, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for malformed user-supplied data (non-finite logits, bad config).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool barrier = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// A dense row-major tensor participating in a reverse-mode graph.
///
/// Values are cheap handles: copies share the underlying node. Leaves created
/// with `variable` hold parameters; every op result records its parents and a
/// closure that pushes its gradient to them.
class Value {
 public:
  Value() = default;

  static Value constant(std::vector<double> data, Shape shape) {
    check_size(data, shape);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return Value(std::move(n));
  }

  static Value constant(std::vector<double> data) {
    const auto n = data.size();
    return constant(std::move(data), Shape{n});
  }

  static Value scalar(double x) { return constant({x}, Shape{1}); }

  static Value zeros(Shape shape) {
    std::vector<double> data(shape_size(shape), 0.0);
    return constant(std::move(data), std::move(shape));
  }

  static Value variable(std::vector<double> data, Shape shape) {
    Value v = constant(std::move(data), std::move(shape));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const {
    if (size() != 1) throw ContractViolation("item() on non-scalar value " + shape_string(shape()));
    return node_->data[0];
  }
  bool requires_grad() const { return node_->requires_grad; }

  /// Writable storage; intended for parameter leaves only.
  std::span<double> mutable_data() { return node_->data; }

  /// Gradient from the most recent backward pass that reached this value, or
  /// zeros when none did.
  std::vector<double> grad() const {
    if (node_->grad.size() != node_->data.size()) return std::vector<double>(size(), 0.0);
    return node_->grad;
  }

  void clear_grad() { node_->grad.clear(); }

  Value detach() const { return constant(node_->data, node_->shape); }

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. Parents and the backward closure are kept only when
  /// gradient tracking is on and some parent requires a gradient.
  static Value make(Shape shape, std::vector<double> data, std::vector<Value> parents,
                    std::function<void(detail::Node&)> backward) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward = std::move(backward);
    }
    return Value(std::move(n));
  }

 private:
  explicit Value(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static void check_size(const std::vector<double>& data, const Shape& shape) {
    if (shape_size(shape) != data.size()) {
      throw ContractViolation("data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_string(shape));
    }
  }

  std::shared_ptr<detail::Node> node_;
};

struct BackwardOptions {
  /// Stop gradient propagation at scope barriers (used for losses that may
  /// only update the parameters upstream of the barriers' consumers).
  bool stop_at_barriers = false;
};

/// Reverse pass from a scalar root. Every reachable node that requires a
/// gradient gets a freshly zeroed buffer which is then accumulated into.
inline void backward(const Value& root, BackwardOptions options = {}) {
  if (!root.defined() || root.size() != 1) {
    throw ContractViolation("backward root must be a scalar");
  }
  if (!root.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  auto* start = root.node().get();
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const bool expand = !(options.stop_at_barriers && node->barrier);
    if (expand && next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (auto* n : order) n->grad.assign(n->data.size(), 0.0);
  start->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward) continue;
    if (options.stop_at_barriers && n->barrier) continue;
    n->backward(*n);
  }
}

namespace detail {

inline std::vector<double>* grad_of(Node& self, std::size_t parent) {
  Node* p = self.parents[parent].get();
  if (!p->requires_grad || p->grad.size() != p->data.size()) return nullptr;
  return &p->grad;
}

}  // namespace detail

}  // namespace dpn
