#pragma once

#include <cstddef>
#include <cstdint>

#include "pfsr/data/dataset.hpp"

namespace pfsr::data {

// Markov-chain corpus: every device owns its own first-order transition
// structure, and its users' sequences are walks on that chain. A step follows
// a chain common to all devices with probability `shared`, otherwise the
// device's own chain.
struct SyntheticConfig {
  std::size_t num_users = 200;
  std::size_t num_items = 300;
  std::size_t num_clients = 8;
  std::size_t min_len = 20;
  std::size_t max_len = 40;
  // Successors per item on each device's chain.
  std::size_t branching = 3;
  // Probability of jumping to a uniformly random item instead.
  double restart = 0.05;
  double shared = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

// Users are dealt to devices round-robin (recorded in user_group) and the
// result is k-core filtered with k = min(5, min_len), so re-filtering is the
// identity.
InteractionDataset make_synthetic(const SyntheticConfig& cfg);

}  // namespace pfsr::data
