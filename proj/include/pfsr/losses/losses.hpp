#pragma once

#include <span>
#include <string>

#include "pfsr/model/parameters.hpp"
#include "pfsr/types.hpp"
#include "pfsr/vrm/vrm.hpp"

namespace pfsr::losses {

// How per-target cross-entropy terms combine into a mini-batch objective.
enum class Reduction { kSum, kMean };
Reduction parse_reduction(const std::string& name);
std::string to_string(Reduction r);

struct LossConfig {
  double gamma1 = 0.05;  // weight of the anchor to the previous local parameters
  double gamma2 = 0.1;   // weight of the anchor to the global parameters
  Reduction reduction = Reduction::kSum;

  void validate() const;
};

// Softmax cross-entropy -log softmax(scores)[target]; scores[j] belongs to
// item j + 1. Throws ContractError if target is outside [1, |V|].
double rec_loss(std::span<const double> scores, ItemId target);

// Dynamic Magnitude Loss:
//   gamma1 * sum_m I[m] (theta[m] - local_prev[m])^2
// + gamma2 * sum_m (1 - I[m]) (theta[m] - global[m])^2
// with I the layer-normalized Fisher values. High-Fisher elements are pulled
// toward the client's previous parameters, the rest toward the server's.
double dynamic_magnitude_loss(const model::ParameterVector& theta,
                              const model::ParameterVector& local_prev,
                              const model::ParameterVector& global,
                              const vrm::FisherVector& fisher_hat, const LossConfig& cfg);

// Adds d(dynamic_magnitude_loss)/d(theta) into `grad`.
void add_dynamic_magnitude_gradient(const model::ParameterVector& theta,
                                    const model::ParameterVector& local_prev,
                                    const model::ParameterVector& global,
                                    const vrm::FisherVector& fisher_hat, const LossConfig& cfg,
                                    std::span<double> grad);

}  // namespace pfsr::losses
