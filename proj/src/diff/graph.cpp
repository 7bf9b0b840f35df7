#include "pfsr/diff/graph.hpp"

#include <algorithm>

#include "pfsr/errors.hpp"

namespace pfsr::diff {

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward,
                  OpKind kind) {
  Node n;
  n.value = std::move(value);
  n.kind = kind;
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](Var p) { return nodes_.at(p.id).requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v); }

void Graph::accumulate_grad(Var v, const Tensor& g) {
  if (!nodes_.at(v.id).requires_grad) return;
  Tensor& buf = grad_buffer(v);
  require_same_shape(buf, g, "accumulate_grad");
  auto dst = buf.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Graph::backward(Var loss) {
  if (nodes_.at(loss.id).value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(nodes_.at(loss.id).value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !n.has_grad) continue;
    if (fault_ && fault_->op == n.kind) {
      Tensor scaled = n.grad;
      for (double& x : scaled.values()) x *= fault_->scale;
      n.backward(*this, scaled);
    } else {
      n.backward(*this, n.grad);
    }
  }
}

}  // namespace pfsr::diff
