#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pfsr/diff/graph.hpp"
#include "pfsr/losses/losses.hpp"
#include "pfsr/model/model.hpp"

namespace pfsr::cli {

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kGradcheckStep = 1e-5;

struct GroupCheck {
  std::string group;  // LayerMap group name, or "dml"
  std::size_t elements = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;  // LayerMap order, then "dml"
  double tolerance = kGradcheckTolerance;

  bool passed() const;
};

// Small model used by the gradcheck command: d 8, S 4, K 4, E 2, |V| 20,
// sequences of length 6.
model::ModelConfig gradcheck_model_config(std::size_t num_blocks);

// Central finite differences against the analytic gradient, for every
// parameter element, of the next-item objective and of a loss over every row
// of the full encoding, plus the Dynamic Magnitude Loss. Weight matrices sit
// at twice their initial scale, other parameters in U(-1, 1). Relative error
// is |a - n| / max(|a|, |n|, 1e-8). `fault` corrupts one backward rule for
// negative-control runs.
GradcheckReport run_gradcheck(const model::ModelConfig& cfg, const losses::LossConfig& loss,
                              std::uint64_t seed,
                              std::optional<diff::GradientFault> fault = std::nullopt);

}  // namespace pfsr::cli
