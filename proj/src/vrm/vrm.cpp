#include "pfsr/vrm/vrm.hpp"

#include <algorithm>
#include <numeric>

#include "pfsr/errors.hpp"

namespace pfsr::vrm {

void VrmConfig::validate() const {
  if (fisher_batches < 1) throw ConfigError("fisher_batches must be >= 1");
}

double MaskPair::retained_fraction() const {
  if (p1.empty()) return 0.0;
  const auto kept = std::count(p1.begin(), p1.end(), std::uint8_t{1});
  return static_cast<double>(kept) / static_cast<double>(p1.size());
}

FisherVector fisher_from_gradients(std::span<const std::vector<double>> batch_gradients) {
  if (batch_gradients.empty()) throw ContractError("fisher: at least one batch is required");
  const std::size_t n = batch_gradients.front().size();
  FisherVector out{std::vector<double>(n, 0.0), false};
  for (const auto& g : batch_gradients) {
    if (g.size() != n) throw DimensionError("fisher: gradient lengths differ");
    for (std::size_t m = 0; m < n; ++m) out.values[m] += g[m] * g[m];
  }
  const double inv = 1.0 / static_cast<double>(batch_gradients.size());
  for (double& v : out.values) v *= inv;
  return out;
}

FisherVector fisher_values(const model::RecModel& model, const model::ParameterVector& params,
                           std::span<const std::vector<model::SequenceTargets>> batches) {
  if (batches.empty()) throw ContractError("fisher_values: empty batch list");
  std::vector<std::vector<double>> grads;
  grads.reserve(batches.size());
  for (const auto& batch : batches) {
    std::size_t targets = 0;
    for (const auto& s : batch) targets += s.positions.size();
    if (targets == 0) throw ContractError("fisher_values: batch without targets");
    std::vector<double> g(params.size());
    model::next_item_loss(model, params, batch, 1.0 / static_cast<double>(targets),
                          model::ForwardOptions{}, g);
    grads.push_back(std::move(g));
  }
  return fisher_from_gradients(grads);
}

FisherVector layerwise_normalize(const FisherVector& fisher, const model::LayerMap& layers) {
  if (fisher.normalized) throw ContractError("layerwise_normalize: input already normalized");
  if (fisher.values.size() != layers.total()) {
    throw DimensionError("layerwise_normalize: Fisher vector does not match layer map");
  }
  FisherVector out{std::vector<double>(fisher.values.size(), 0.0), true};
  for (const auto& g : layers.groups()) {
    const auto first = fisher.values.begin() + static_cast<std::ptrdiff_t>(g.offset);
    const auto last = first + static_cast<std::ptrdiff_t>(g.length);
    const auto [lo_it, hi_it] = std::minmax_element(first, last);
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    if (range <= 0.0) continue;  // degenerate group stays at zero
    for (std::size_t m = g.offset; m < g.offset + g.length; ++m) {
      out.values[m] = std::clamp((fisher.values[m] - lo) / range, 0.0, 1.0);
    }
  }
  return out;
}

MaskPair build_masks(const FisherVector& normalized, double lambda) {
  if (!normalized.normalized) throw ContractError("build_masks: Fisher values are not normalized");
  MaskPair masks;
  masks.p1.resize(normalized.values.size());
  masks.p2.resize(normalized.values.size());
  for (std::size_t m = 0; m < normalized.values.size(); ++m) {
    const bool keep_local = normalized.values[m] >= lambda;
    masks.p1[m] = keep_local ? 1 : 0;
    masks.p2[m] = keep_local ? 0 : 1;
  }
  return masks;
}

model::ParameterVector mix_parameters(const model::ParameterVector& local_prev,
                                      const model::ParameterVector& global,
                                      const MaskPair& masks) {
  model::require_compatible(local_prev, global, "mix_parameters");
  if (masks.p1.size() != local_prev.size() || masks.p2.size() != local_prev.size()) {
    throw ContractError("mix_parameters: mask length does not match d_theta");
  }
  model::ParameterVector out(local_prev.layers());
  for (std::size_t m = 0; m < out.size(); ++m) {
    // Exact selection; p1 and p2 are complementary 0/1 masks.
    out[m] = masks.p1[m] ? local_prev[m] : global[m];
    if (masks.p1[m] + masks.p2[m] != 1) throw ContractError("mix_parameters: masks not complementary");
  }
  return out;
}

std::vector<double> group_retention(const MaskPair& masks, const model::LayerMap& layers) {
  if (masks.size() != layers.total()) throw DimensionError("group_retention: size mismatch");
  std::vector<double> out;
  for (const auto& g : layers.groups()) {
    const auto first = masks.p1.begin() + static_cast<std::ptrdiff_t>(g.offset);
    const auto kept = std::count(first, first + static_cast<std::ptrdiff_t>(g.length),
                                 std::uint8_t{1});
    out.push_back(static_cast<double>(kept) / static_cast<double>(g.length));
  }
  return out;
}

}  // namespace pfsr::vrm
