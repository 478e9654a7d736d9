#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace voxgan {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] inline void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

template <typename T>
class Tensor;

// When disabled, ops compute values only and record no graph edges. Backward
// passes run under the caller's create_graph setting so that gradients can
// themselves be differentiated.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class GradGuard {
 public:
  explicit GradGuard(bool on) : prev_(GradMode::enabled()) { GradMode::set(on); }
  ~GradGuard() { GradMode::set(prev_); }
  GradGuard(const GradGuard&) = delete;
  GradGuard& operator=(const GradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor<T>> parents;
  // Maps the incoming gradient to per-parent gradients. Built from ops so the
  // returned tensors are differentiable again when recording is on. Lambdas
  // capture only plain configuration, never nodes, to keep the graph acyclic.
  std::function<std::vector<Tensor<T>>(const Tensor<T>& grad,
                                       const std::vector<Tensor<T>>& parents)>
      backward;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> values) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
      shape_fail("Tensor::from", "value count " + std::to_string(values.size()) +
                                     " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    return t;
  }

  static Tensor full(Shape shape, T value) {
    const auto n = static_cast<std::size_t>(numel(shape));
    return from(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  // Leaf that participates in differentiation.
  static Tensor param(Shape shape, std::vector<T> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t size() const { return numel(node_->shape); }
  const std::vector<T>& values() const { return node_->values; }
  std::vector<T>& values_mut() { return node_->values; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op_name() const { return node_->op; }

  T item() const {
    if (size() != 1) shape_fail("item", "tensor " + shape_str(shape()) + " is not scalar");
    return node_->values[0];
  }

  // Same values, no graph history.
  Tensor detach() const { return from(shape(), values()); }

  detail::Node<T>* node() const { return node_.get(); }

  static Tensor make_op(const char* op, Shape shape, std::vector<T> values,
                        std::vector<Tensor> parents,
                        std::function<std::vector<Tensor>(const Tensor&,
                                                          const std::vector<Tensor>&)>
                            backward) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->op = op;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (GradMode::enabled() && needs) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
      t.node_->backward = std::move(backward);
    }
    return t;
  }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

template <typename T>
std::vector<const Node<T>*> topo_order(const Node<T>* root) {
  std::vector<const Node<T>*> order;
  std::unordered_map<const Node<T>*, int> state;  // 0 new, 1 open, 2 done
  std::vector<const Node<T>*> stack{root};
  while (!stack.empty()) {
    const Node<T>* n = stack.back();
    int& st = state[n];
    if (st == 0) {
      st = 1;
      for (const auto& p : n->parents) {
        if (p.requires_grad() && state[p.node()] == 0) stack.push_back(p.node());
      }
    } else {
      stack.pop_back();
      if (st == 1) {
        st = 2;
        order.push_back(n);
      }
    }
  }
  return order;  // parents before children
}

}  // namespace detail

// Reverse-mode gradient of a scalar with respect to `wrt`. With create_graph
// the returned tensors carry their own history and can be differentiated
// again. Tensors in `wrt` that the output does not depend on get zeros.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& wrt,
                            bool create_graph = false) {
  if (output.size() != 1) {
    shape_fail("grad", "output " + shape_str(output.shape()) + " is not scalar");
  }
  std::unordered_map<const detail::Node<T>*, Tensor<T>> grads;
  grads[output.node()] = Tensor<T>::full(output.shape(), T(1));

  if (output.requires_grad()) {
    const auto order = detail::topo_order(output.node());
    GradGuard guard(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const detail::Node<T>* n = *it;
      if (!n->backward) continue;
      const auto found = grads.find(n);
      if (found == grads.end()) continue;
      const auto parent_grads = n->backward(found->second, n->parents);
      for (std::size_t i = 0; i < n->parents.size(); ++i) {
        const auto& p = n->parents[i];
        if (!p.requires_grad() || !parent_grads[i].defined()) continue;
        auto slot = grads.find(p.node());
        if (slot == grads.end()) {
          grads[p.node()] = parent_grads[i];
        } else {
          slot->second = add(slot->second, parent_grads[i]);
        }
      }
    }
  }

  std::vector<Tensor<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    const auto found = grads.find(w.node());
    out.push_back(found != grads.end() ? found->second : Tensor<T>::zeros(w.shape()));
  }
  return out;
}

}  // namespace voxgan
