#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "pfsr/diff/tensor.hpp"

namespace pfsr::diff {

// Handle to a node recorded on a Graph.
struct Var {
  std::size_t id = 0;
};

// Op kinds that can be targeted by a gradient fault (negative-control testing
// of the gradient checker).
enum class OpKind {
  kGeneric,
  kMatmul,
  kSelectiveScan,
  kCausalConv,
  kSilu,
  kSoftplus,
  kCrossEntropy,
};

struct GradientFault {
  OpKind op = OpKind::kGeneric;
  double scale = 1.0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
// already topologically sorted; backward() walks it once in reverse.
//
// A Graph is single-threaded. Separate clients use separate graphs.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. `backward` receives d(loss)/d(out) and must
  // accumulate into the parents via accumulate_grad(). It is skipped when no
  // parent requires a gradient.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward,
             OpKind kind = OpKind::kGeneric);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() w.r.t. v; zeros if none reached it.
  const Tensor& grad(Var v);

  void accumulate_grad(Var v, const Tensor& g);
  // Mutable gradient buffer for v (allocated on demand). Kernels with
  // irregular access patterns accumulate into it directly.
  Tensor& grad_buffer(Var v);

  // Seeds d(loss)/d(loss) = 1 and propagates to every leaf. `loss` must hold
  // exactly one value.
  void backward(Var loss);

  void set_fault(std::optional<GradientFault> fault) { fault_ = fault; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    OpKind kind = OpKind::kGeneric;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::optional<GradientFault> fault_;
};

}  // namespace pfsr::diff
