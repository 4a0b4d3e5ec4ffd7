#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mlst {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {
inline thread_local bool grad_mode_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct Node;
using BackwardFn = std::function<void(Node&)>;

/// One vertex of the computation graph. Values are written once by the op
/// that creates the node; only `grad` is mutated afterwards.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    check_extents(shape);
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    check_extents(shape);
    if (shape_numel(shape) != values.size())
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fill shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  /// Extent along `axis`; negative axes count from the back.
  std::size_t dim(int axis) const { return node_->shape[normalize_axis(axis)]; }

  std::size_t normalize_axis(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                           shape_str(shape()));
    return static_cast<std::size_t>(a);
  }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access, meant for parameter initialisation and optimisers.
  std::span<double> mutable_values() { return node_->value; }
  const double* data() const { return node_->value.data(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  double at(std::initializer_list<std::size_t> index) const {
    return node_->value[flat_index(index)];
  }

  std::size_t flat_index(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank())
      throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t d = 0;
    for (std::size_t i : index) {
      if (i >= node_->shape[d]) throw DimensionError("index out of range");
      flat = flat * node_->shape[d] + i;
      ++d;
    }
    return flat;
  }

  /// Copy detached from the graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  /// Reverse-mode sweep from a scalar. Returns the number of graph nodes visited;
  /// each reachable node's backward function runs exactly once.
  std::size_t backward(double seed = 1.0) const {
    if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
    std::vector<Node*> order;
    topo_order(order);
    node_->grad_buffer()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    return order.size();
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  static void check_extents(const Shape& shape) {
    for (std::size_t e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }

  void topo_order(std::vector<Node*>& order) const {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

/// Builds the output node of an op. The backward function and parent links
/// are attached only when gradient mode is on and some input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  if (grad_enabled() && any_requires_grad(inputs)) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->parents.push_back(t->node_ptr());
    n->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(n));
}

inline Tensor make_result_n(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                            BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  bool need = false;
  for (const auto& t : inputs) need = need || t.requires_grad();
  if (grad_enabled() && need) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(n));
}

/// Parent `i` of `self` if it wants a gradient, else nullptr.
inline double* parent_grad(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? p->grad_buffer() : nullptr;
}

}  // namespace detail
}  // namespace mlst
