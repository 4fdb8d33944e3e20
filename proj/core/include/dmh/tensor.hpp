#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmh/check.hpp"
#include "dmh/rng.hpp"

namespace dmh {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Reverse-mode autodiff is tape-free: each node carries a closure that routes
// the node's grad into its parents' grads. backward() topologically orders the
// graph reachable from the loss and runs the closures in reverse.
template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // sized lazily; accumulates until zeroed
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Enables/disables graph recording (thread-local). Forward-only passes (online
// testing) run with recording off and build no graph.
inline int& grad_depth() {
  thread_local int depth = 0;
  return depth;
}
inline bool grad_enabled() { return grad_depth() == 0; }

struct NoGradGuard {
  NoGradGuard() { ++grad_depth(); }
  ~NoGradGuard() { --grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor handle. Copies are shallow (shared node).
template <typename Real>
class Tensor {
 public:
  using Node = TensorNode<Real>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), Real(0)); }

  static Tensor filled(Shape shape, Real v) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(static_cast<size_t>(numel(t.node_->shape)), v);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<Real> data) {
    DMH_CHECK_T(ShapeError, numel(shape) == static_cast<int64_t>(data.size()),
                "data length ", data.size(), " does not match shape ", shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(Real v) { return from_data({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1)) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.node_->value) v = static_cast<Real>(rng.normal()) * stddev;
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, Real lo, Real hi) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.node_->value)
      v = lo + static_cast<Real>(rng.uniform()) * (hi - lo);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  Real* data() { return node_->value.data(); }
  const Real* data() const { return node_->value.data(); }
  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }

  Real item() const {
    DMH_CHECK(size() == 1, "item() on non-scalar tensor ", shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    if (b) node_->ensure_grad();
    return *this;
  }

  // Handles have pointer semantics: a const handle still exposes a mutable
  // gradient buffer, which backward functions capture by value.
  std::vector<Real>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), Real(0)); }

  std::shared_ptr<Node> node() const { return node_; }

  // Detach from the graph: same storage, no history.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Real>
void topo_visit(TensorNode<Real>* n, std::unordered_set<TensorNode<Real>*>& seen,
                std::vector<TensorNode<Real>*>& order) {
  // Iterative DFS; graphs can be deep (per-timestep chains).
  struct Frame {
    TensorNode<Real>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{n, 0}};
  seen.insert(n);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<Real>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Populates grads of every requires_grad tensor reachable from `loss`.
// Grads accumulate across calls until explicitly zeroed.
template <typename Real>
void backward(const Tensor<Real>& loss) {
  DMH_CHECK(loss.size() == 1, "backward() requires a scalar loss, got ",
            shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;
  std::unordered_set<TensorNode<Real>*> seen;
  std::vector<TensorNode<Real>*> order;
  detail::topo_visit(root.get(), seen, order);
  root->ensure_grad();
  root->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<Real>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// Helper used by op implementations: marks `out` as produced from `inputs`
// with the given backward closure, when recording is active.
template <typename Real, typename Fn>
void attach_backward(Tensor<Real>& out, std::vector<Tensor<Real>> inputs, Fn&& fn) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return;
  auto node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node());
  node->backward_fn = std::forward<Fn>(fn);
}

}  // namespace dmh
