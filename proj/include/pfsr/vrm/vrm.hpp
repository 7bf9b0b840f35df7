#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pfsr/model/objective.hpp"
#include "pfsr/model/parameters.hpp"

// Variable Response Mechanism: Fisher-guided selection, per parameter element,
// between a client's retained parameters and the downloaded global ones.
namespace pfsr::vrm {

struct VrmConfig {
  // Elements whose normalized Fisher value is >= lambda keep their local value.
  double lambda = 0.5;
  std::size_t fisher_batches = 1;

  void validate() const;
};

// Per-element empirical Fisher values. `normalized` marks the output of
// layerwise_normalize (all values then lie in [0, 1]).
struct FisherVector {
  std::vector<double> values;
  bool normalized = false;
};

// Complementary binary masks: p1[m] + p2[m] == 1 for every m.
struct MaskPair {
  std::vector<std::uint8_t> p1;
  std::vector<std::uint8_t> p2;

  std::size_t size() const { return p1.size(); }
  // Fraction of elements with p1 == 1.
  double retained_fraction() const;
};

// I_m = mean_b g_{b,m}^2 over per-batch gradients of the log-likelihood.
FisherVector fisher_from_gradients(std::span<const std::vector<double>> batch_gradients);

// Empirical Fisher of `params` on the given mini-batches. The per-batch
// log-likelihood is the mean next-item log-probability over the batch's
// targets; the sign is irrelevant after squaring. Eval-mode forward.
FisherVector fisher_values(const model::RecModel& model, const model::ParameterVector& params,
                           std::span<const std::vector<model::SequenceTargets>> batches);

// Min-max normalization inside each layer group. A group whose values are
// all equal maps to zeros.
FisherVector layerwise_normalize(const FisherVector& fisher, const model::LayerMap& layers);

// p1[m] = 1 iff normalized[m] >= lambda; p2 = 1 - p1.
MaskPair build_masks(const FisherVector& normalized, double lambda);

// theta[m] = p1[m] * local_prev[m] + p2[m] * global[m].
model::ParameterVector mix_parameters(const model::ParameterVector& local_prev,
                                      const model::ParameterVector& global,
                                      const MaskPair& masks);

// Fraction of p1 == 1 elements inside each layer group, in LayerMap order.
std::vector<double> group_retention(const MaskPair& masks, const model::LayerMap& layers);

}  // namespace pfsr::vrm
