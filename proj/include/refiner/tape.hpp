#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "refiner/tensor.hpp"

namespace refiner {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
  bool operator==(const Var&) const = default;
};

/// Reverse-mode gradient tape. Ops append nodes in execution order; backward()
/// walks them in exact reverse and accumulates gradients additively.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, "constant", {}); }
  Var variable(Tensor<T> value) { return push(std::move(value), true, "variable", {}); }

  /// Records the result of an op. The backward function runs only when the
  /// output requires a gradient and received one.
  Var record(const char* op, Tensor<T> value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).requires_grad;
    return push(std::move(value), needs, op, needs ? std::move(backward) : BackwardFn{});
  }
  Var record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const char* op_name(Var v) const { return node(v).op; }

  /// Gradient of the last backward root w.r.t. v (zeros if v was not reached).
  Tensor<T> grad(Var v) const {
    const Node& n = node(v);
    return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }

  /// Adds `g` into the gradient slot of v. Ignored for constants.
  void accumulate(Var v, const Tensor<T>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw DimensionError(std::string("gradient shape ") + shape_str(g.shape()) + " does not match value " +
                           shape_str(n.value.shape()) + " for op " + n.op);
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Mutable gradient buffer for v, zero-initialized on first use.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(Var root) {
    if (value(root).size() != 1) {
      throw DimensionError("backward(root) needs a scalar root; got " + shape_str(value(root).shape()));
    }
    backward(root, Tensor<T>(value(root).shape(), T{1}));
  }

  void backward(Var root, const Tensor<T>& seed) {
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    trace_.clear();
    accumulate(root, seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      trace_.push_back(static_cast<std::uint32_t>(i));
      n.backward(*this, n.value, n.grad);
    }
  }

  /// Node ids whose backward ran during the last backward(), in visit order.
  const std::vector<std::uint32_t>& backward_trace() const { return trace_; }

  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    trace_.clear();
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "";
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, const char* op, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("invalid tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("invalid tape variable");
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;  // deque: value() references survive later pushes
  std::vector<std::uint32_t> trace_;
};

}  // namespace refiner
