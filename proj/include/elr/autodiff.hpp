#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "elr/tensor.hpp"

namespace elr {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

using GradMap = std::map<std::string, Tensor>;

/// Records operations in execution order. Because every node is appended after
/// its inputs, the node vector is a topological order and reverse iteration is
/// a valid backward schedule.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;  // non-empty for named leaves
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    node.value.requires_grad = false;
    return push(std::move(node));
  }

  Var parameter(std::string name, Tensor value) {
    Node node;
    node.value = std::move(value);
    node.value.requires_grad = true;
    node.requires_grad = true;
    node.param_name = std::move(name);
    return push(std::move(node));
  }

  /// Appends an op result. The node requires a gradient when any input does.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
    Node node;
    for (int in : inputs) {
      if (in < 0 || in >= static_cast<int>(nodes_.size())) throw ContractError("tape input precedes no node");
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    node.value = std::move(value);
    node.value.requires_grad = node.requires_grad;
    node.inputs = std::move(inputs);
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Node& node(int id) const { return nodes_.at(id); }
  const Tensor& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(int id) {
    Tensor& g = grads_.at(id);
    if (g.empty()) g = Tensor(nodes_[id].value.shape());
    return g;
  }

  /// Adds `delta` into the gradient of `id` when that node needs one.
  void accumulate(int id, const Tensor& delta) {
    if (!nodes_[id].requires_grad) return;
    grad(id) += delta;
  }

  GradMap backward(Var loss) {
    if (loss.tape != this) throw ContractError("loss belongs to another tape");
    if (value(loss.id).size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(value(loss.id).shape()));
    }
    for (auto& g : grads_) g = Tensor();
    GradMap out;
    if (!nodes_[loss.id].requires_grad) return collect(out);
    grad(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || grads_[id].empty()) continue;
      n.backward(*this, id);
    }
    return collect(out);
  }

  /// ReLU pre-activations seen on this tape, in order; used by gradient checks
  /// to detect finite-difference stencils that straddle a kink.
  const std::vector<int>& relu_inputs() const noexcept { return relu_inputs_; }
  void note_relu_input(int id) { relu_inputs_.push_back(id); }

 private:
  Var push(Node node) {
    nodes_.push_back(std::move(node));
    grads_.emplace_back();
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  GradMap& collect(GradMap& out) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.param_name.empty()) continue;
      out[n.param_name] = grads_[i].empty() ? Tensor(n.value.shape()) : grads_[i];
    }
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<int> relu_inputs_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

/// Constant copy of `x`: gradients do not flow through the result.
inline Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace elr
