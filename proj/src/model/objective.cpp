#include "pfsr/model/objective.hpp"

#include <algorithm>

#include "pfsr/diff/ops.hpp"
#include "pfsr/errors.hpp"

namespace pfsr::model {

double next_item_loss(const RecModel& model, const ParameterVector& params,
                      std::span<const SequenceTargets> batch, double weight,
                      const ForwardOptions& opts, std::span<double> grad,
                      std::optional<diff::GradientFault> fault) {
  const bool want_grad = !grad.empty();
  diff::Graph g;
  g.set_fault(fault);
  auto bound = model.bind(g, params, want_grad);

  std::vector<diff::Var> selected;
  std::vector<std::size_t> targets;
  for (const auto& item : batch) {
    if (item.positions.empty()) continue;
    const std::size_t last = *std::max_element(item.positions.begin(), item.positions.end());
    if (last >= item.sequence.size()) throw ContractError("next_item_loss: target past sequence end");
    std::vector<std::size_t> rows;
    for (std::size_t p : item.positions) {
      if (p < 1) throw ContractError("next_item_loss: target position must be >= 1");
      const ItemId target = item.sequence[p];
      if (target < 1 || static_cast<std::size_t>(target) > model.config().num_items) {
        throw ContractError("next_item_loss: target item out of range");
      }
      rows.push_back(p - 1);
      targets.push_back(static_cast<std::size_t>(target - 1));
    }
    diff::Var h = model.embed(g, bound, item.sequence.first(last), opts);
    diff::Var enc = model.encode_prefixes(g, bound, h);
    selected.push_back(diff::select_rows(g, enc, rows));
  }
  if (selected.empty()) throw ContractError("next_item_loss: batch has no targets");
  // One scoring pass over all selected rows.
  diff::Var scores = model.score_rows(g, bound, diff::concat_rows(g, selected));
  diff::Var total = diff::cross_entropy(g, scores, targets, weight);
  const double value = g.value(total).item();
  if (want_grad) {
    g.backward(total);
    model.collect_gradients(g, bound, grad);
  }
  return value;
}

}  // namespace pfsr::model
