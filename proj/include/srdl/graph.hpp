// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "srdl/errors.hpp"
#include "srdl/tensor.hpp"

namespace srdl {

/// Handle to a value recorded in a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/**
 * Reverse-mode tape.
 *
 * Every op appends one record holding its output value, the ids of its inputs
 * and a closure that maps the output gradient to input gradients. Records
 * are only ever appended, so inputs always precede the ops that consume them
 * and a reverse sweep is a valid topological order.
 *
 * Values are never modified after they are recorded. The graph also keeps a
 * running count of the arithmetic performed by forward ops, which backs the
 * FLOPs oracle in the tests.
 */
template <typename T>
class Graph {
public:
  using Backward = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  /// Value that never receives a gradient (data, frozen references).
  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Value whose gradient is collected (parameters, probed inputs).
  Var leaf(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// Appends an op result. `inputs` decide whether the result needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulated into `v`; zeros when nothing flowed there.
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  /// Mutable accumulation buffer, allocated on first use. For op authors.
  Tensor<T>& grad_buffer(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  /// Seeds d(out)/d(out) = 1 for a one-element output and sweeps backwards.
  void backward(Var out) {
    if (value(out).size() != 1) {
      throw ContractError("backward() without a seed needs a scalar output, got " +
                          shape_str(value(out).shape()));
    }
    backward(out, Tensor<T>::filled(value(out).shape(), T(1)));
  }

  void backward(Var out, const Tensor<T>& seed) {
    if (seed.shape() != value(out).shape()) {
      throw DimensionError("backward seed " + shape_str(seed.shape()) + " vs output " +
                           shape_str(value(out).shape()));
    }
    if (!requires_grad(out)) return;
    auto& g = grad_buffer(out);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (std::size_t k = out.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.backward || n.grad.empty()) continue;
      // Closures only touch the gradients of earlier records, never nodes_ itself.
      n.backward(*this, n.grad);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<T>();
  }

  void add_flops(std::uint64_t n) { flops_ += n; }
  std::uint64_t flops() const { return flops_; }

private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::uint64_t flops_ = 0;
};

}  // namespace srdl
