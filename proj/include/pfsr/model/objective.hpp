#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pfsr/diff/graph.hpp"
#include "pfsr/model/model.hpp"

namespace pfsr::model {

// Next-item targets drawn from one sequence: for each p in `positions`
// (p >= 1), predict sequence[p] from sequence[0, p).
struct SequenceTargets {
  std::span<const ItemId> sequence;
  std::vector<std::size_t> positions;
};

// weight * sum over all targets of -log softmax(scores)[target], i.e. the
// negative log-likelihood of the batch scaled by `weight`. When `grad` is
// non-empty it receives the gradient w.r.t. every parameter (overwritten).
double next_item_loss(const RecModel& model, const ParameterVector& params,
                      std::span<const SequenceTargets> batch, double weight,
                      const ForwardOptions& opts, std::span<double> grad,
                      std::optional<diff::GradientFault> fault = std::nullopt);

}  // namespace pfsr::model
