// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "ddghm/tensor.hpp"

namespace ddghm {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only meaningful together with
/// the tape that produced it.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape. Each op appends a node holding the forward value and a
/// closure that routes the node's adjoint to its parents. One tape per
/// forward pass; backward() may be called repeatedly and flushes leaf
/// adjoints into the bound Parameter::grad slots (+=).
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Tensor&)>;

  Var constant(Tensor value) { return make(std::move(value), false, nullptr, {}); }

  /// Leaf bound to a parameter slot. Memoized: the same Parameter yields the
  /// same node, so its adjoint accumulates in one place.
  Var param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var{this, it->second};
    Var v = make(p.value, true, nullptr, {});
    nodes_[static_cast<std::size_t>(v.id)].bound = &p;
    param_ids_.emplace(&p, v.id);
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 on a scalar node, sweeps the tape in reverse,
  /// then adds each bound leaf's adjoint into its Parameter::grad.
  void backward(Var loss) {
    if (!loss.valid() || loss.tape != this) {
      throw std::invalid_argument("backward: variable does not belong to this tape");
    }
    const Tensor& lv = node(loss).value;
    if (!is_scalar(lv)) {
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(lv));
    }
    for (auto& n : nodes_) {
      if (n.grad.size() != 0) n.grad.setZero();
    }
    accum(loss.id, Tensor::Ones(1, 1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this, n.grad);
    }
    for (auto& n : nodes_) {
      if (n.bound != nullptr && n.grad.size() != 0) n.bound->grad += n.grad;
    }
  }

  /// Internal: append a node. `parents` is advisory; propagation is driven by
  /// the closure, parents only decide whether the node tracks gradients.
  Var make(Tensor value, bool needs_grad, BackFn back, std::initializer_list<Var> parents) {
    bool ng = needs_grad;
    for (const Var& p : parents) {
      if (p.tape != this) throw std::invalid_argument("op: mixed tapes");
      ng = ng || node(p).needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = ng;
    if (ng) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void accum(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // lazily sized on first contribution
    bool needs_grad = false;
    Parameter* bound = nullptr;
    BackFn back;
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.tape != this) throw std::invalid_argument("stale or foreign Var");
    return nodes_.at(static_cast<std::size_t>(v.id));
  }
  Node& node(Var v) {
    if (!v.valid() || v.tape != this) throw std::invalid_argument("stale or foreign Var");
    return nodes_.at(static_cast<std::size_t>(v.id));
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

// ---- elementwise and arithmetic ops ----------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var scale(Var a, double c);
Var shift(Var a, double c);
/// Broadcast-add a 1xC row vector onto every row of an RxC matrix.
Var add_rowvec(Var m, Var v);
/// Broadcast-multiply a 1x1 scalar node with a matrix node.
Var mul_scalar(Var s, Var a);

Var sigmoid(Var a);
Var tanh_(Var a);
Var exp_(Var a);
Var log_(Var a);
Var relu(Var a);

// ---- linear algebra / shaping ----------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);  // row-major order
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
/// Gather rows by index (duplicates allowed); adjoint scatter-adds.
Var rows(Var a, const std::vector<int>& idx);
/// Copy of `base` with base[idx[i], :] replaced by repl.row(i). Indices must
/// be unique.
Var scatter_rows(Var base, const std::vector<int>& idx, Var repl);
Var element(Var a, Eigen::Index i, Eigen::Index j);  // 1x1 view

// ---- reductions ------------------------------------------------------------

Var sum(Var a);                 // 1x1
Var dot(Var a, Var b);          // same shape, 1x1
Var softmax(Var a);             // vector (1xn or nx1), numerically stabilized
Var logsumexp(Var a);           // vector -> 1x1

// ---- finite-difference verification ----------------------------------------

/// Builds the loss with the given callback, computes analytic gradients via
/// one backward pass, then central differences (f(x+eps)-f(x-eps))/(2 eps)
/// entry by entry. Returns the maximum relative error
///   |a - n| / max(|a|, |n|, 1e-4)
/// over every entry of every parameter. eps must lie in [1e-7, 1e-3].
double grad_check(const std::function<Var(Tape&, ParameterStore&)>& loss_builder,
                  ParameterStore& store, double eps);

}  // namespace ddghm
