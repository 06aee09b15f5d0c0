#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hasa/tensor.hpp"

namespace hasa {

struct Parameter {
  Tensor value;
  std::string name;
  bool frozen = false;
  std::optional<Tensor> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : value(std::move(v)), name(std::move(n)) {}
};

// Reverse-mode tape. Nodes are appended in execution order, so every node's
// inputs precede it; backward() visits each node exactly once in reverse.
// Leaves created through watch() write their gradient back into the owning
// Parameter (zeros when the parameter is unreachable from the loss).
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

  // Registers a parameter as a leaf. Watching the same parameter twice
  // returns the same node, so gradients from shared uses accumulate.
  Tensor watch(Parameter& p) {
    auto it = watch_index_.find(&p);
    if (it != watch_index_.end()) {
      Tensor t = p.value.detached();
      t.tape = this;
      t.node = it->second;
      return t;
    }
    const int id = emit(nullptr);
    watch_index_.emplace(&p, id);
    watched_.emplace_back(id, &p);
    Tensor t = p.value.detached();
    t.tape = this;
    t.node = id;
    return t;
  }

  int emit(BackwardFn fn) {
    nodes_.push_back(Node{std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int node, Tensor grad) {
    if (node < 0 || node >= static_cast<int>(nodes_.size()))
      throw UsageError("accumulate on unknown tape node");
    auto& slot = grads_[node];
    if (!slot) {
      slot = std::move(grad);
      return;
    }
    if (!(slot->shape == grad.shape))
      throw DimensionError("gradient shape mismatch at tape node " + std::to_string(node));
    float* a = slot->data.data();
    const float* b = grad.data.data();
    const size_t n = grad.data.size();
    for (size_t i = 0; i < n; ++i) a[i] += b[i];
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Populates
  // grad on every watched parameter.
  void backward(const Tensor& loss) {
    if (loss.tape != this || loss.node < 0)
      throw UsageError("backward: loss is not on this tape");
    if (!loss.is_scalar())
      throw UsageError("backward requires a scalar loss, got " + to_string(loss.shape));
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss.node] = Tensor(Shape4{1, 1, 1, 1}, 1.0f);
    for (int i = loss.node; i >= 0; --i) {
      if (!grads_[i] || !nodes_[i].fn) continue;
      nodes_[i].fn(*grads_[i], *this);
    }
    for (auto& [id, param] : watched_) {
      if (grads_[id])
        param->grad = grads_[id]->detached();
      else
        param->grad = Tensor(param->value.shape, 0.0f);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    BackwardFn fn;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::vector<std::pair<int, Parameter*>> watched_;
  std::unordered_map<const Parameter*, int> watch_index_;
};

// Watches p when a tape is active, otherwise returns the raw value.
inline Tensor use_param(Parameter& p, Tape* tape) {
  return tape ? tape->watch(p) : p.value.detached();
}

}  // namespace hasa
