#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "emoji/errors.hpp"
#include "emoji/numeric/tensor.hpp"

namespace emoji::numeric {

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is reset.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  T item() const { return value()[0]; }
};

/// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
/// so reverse iteration is a valid topological order for backward().
///
/// Parameter leaves accumulate straight into Parameter::grad; gradients of a
/// parameter used several times therefore sum. After backward() the graph is
/// freed and the tape must be reset() before it can record again.
template <typename T>
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : recording_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    check_open();
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> parameter(Parameter<T>& p) {
    check_open();
    Node n;
    n.external = &p.value;
    n.external_grad = &p.grad;
    n.requires_grad = recording_;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Appends an op result. The backprop closure is dropped when the tape is
  /// not recording or no input needs a gradient.
  Var<T> push(Tensor<T> value, bool requires_grad, Backprop fn, const char* op) {
    check_open();
    require_finite(value, op);
    Node n;
    n.owned = std::move(value);
    n.requires_grad = recording_ && requires_grad;
    if (n.requires_grad) n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient flowing into node `id` (only meaningful inside backprop).
  const Tensor<T>& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external_grad ? *n.external_grad : n.grad;
  }

  /// Accumulator for the gradient of an input node, allocated on first use.
  Tensor<T>& grad_accumulator(std::size_t id) {
    Node& n = nodes_[id];
    if (n.external_grad) return *n.external_grad;
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Propagates d(loss)/d(node) for every reachable node and returns the loss.
  T backward(Var<T> loss) {
    if (consumed_) throw NumericError("backward called twice without reset");
    if (!recording_) throw NumericError("backward on a non-recording tape");
    if (loss.tape != this) throw NumericError("loss does not belong to this tape");
    const Tensor<T>& lv = value(loss.id);
    if (lv.size() != 1) throw NumericError("backward requires a scalar loss, got " + shape_string(lv.shape()));
    const T result = lv[0];
    consumed_ = true;
    if (nodes_[loss.id].requires_grad) {
      Tensor<T>& seed = grad_accumulator(loss.id);
      seed[0] += T{1};
      for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backprop) continue;
        if (!n.has_grad && !n.external_grad) continue;
        n.backprop(*this, i);
      }
    }
    nodes_.clear();
    return result;
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* external_grad = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Backprop backprop;
  };

  void check_open() const {
    if (consumed_) throw NumericError("tape already consumed by backward; call reset()");
  }

  std::deque<Node> nodes_;
  bool recording_;
  bool consumed_ = false;
};

}  // namespace emoji::numeric
