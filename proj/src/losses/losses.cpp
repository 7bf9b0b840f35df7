#include "pfsr/losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "pfsr/errors.hpp"

namespace pfsr::losses {
namespace {

void check_dml_inputs(const model::ParameterVector& theta, const model::ParameterVector& local_prev,
                      const model::ParameterVector& global, const vrm::FisherVector& fisher_hat) {
  model::require_compatible(theta, local_prev, "dynamic_magnitude_loss");
  model::require_compatible(theta, global, "dynamic_magnitude_loss");
  if (!fisher_hat.normalized) {
    throw ContractError("dynamic_magnitude_loss: Fisher values must be normalized");
  }
  if (fisher_hat.values.size() != theta.size()) {
    throw ContractError("dynamic_magnitude_loss: Fisher vector length mismatch");
  }
}

}  // namespace

Reduction parse_reduction(const std::string& name) {
  if (name == "sum") return Reduction::kSum;
  if (name == "mean") return Reduction::kMean;
  throw ConfigError("unknown loss reduction '" + name + "' (expected sum|mean)");
}

std::string to_string(Reduction r) { return r == Reduction::kSum ? "sum" : "mean"; }

void LossConfig::validate() const {
  if (!(gamma1 >= 0.0)) throw ConfigError("gamma1 must be >= 0");
  if (!(gamma2 >= 0.0)) throw ConfigError("gamma2 must be >= 0");
}

double rec_loss(std::span<const double> scores, ItemId target) {
  if (target < 1 || static_cast<std::size_t>(target) > scores.size()) {
    throw ContractError("rec_loss: target " + std::to_string(target) + " outside [1, " +
                        std::to_string(scores.size()) + "]");
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  return -(scores[static_cast<std::size_t>(target - 1)] - mx - std::log(z));
}

double dynamic_magnitude_loss(const model::ParameterVector& theta,
                              const model::ParameterVector& local_prev,
                              const model::ParameterVector& global,
                              const vrm::FisherVector& fisher_hat, const LossConfig& cfg) {
  check_dml_inputs(theta, local_prev, global, fisher_hat);
  double local_term = 0.0;
  double global_term = 0.0;
  for (std::size_t m = 0; m < theta.size(); ++m) {
    const double w = fisher_hat.values[m];
    const double dl = theta[m] - local_prev[m];
    const double dg = theta[m] - global[m];
    local_term += w * dl * dl;
    global_term += (1.0 - w) * dg * dg;
  }
  return cfg.gamma1 * local_term + cfg.gamma2 * global_term;
}

void add_dynamic_magnitude_gradient(const model::ParameterVector& theta,
                                    const model::ParameterVector& local_prev,
                                    const model::ParameterVector& global,
                                    const vrm::FisherVector& fisher_hat, const LossConfig& cfg,
                                    std::span<double> grad) {
  check_dml_inputs(theta, local_prev, global, fisher_hat);
  if (grad.size() != theta.size()) throw DimensionError("DML gradient: size mismatch");
  for (std::size_t m = 0; m < theta.size(); ++m) {
    const double w = fisher_hat.values[m];
    grad[m] += 2.0 * cfg.gamma1 * w * (theta[m] - local_prev[m]) +
               2.0 * cfg.gamma2 * (1.0 - w) * (theta[m] - global[m]);
  }
}

}  // namespace pfsr::losses
