#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pfsr/data/dataset.hpp"
#include "pfsr/model/model.hpp"
#include "pfsr/types.hpp"

namespace pfsr::eval {

inline constexpr std::size_t kDefaultKs[] = {5, 10};

// 1-based rank of `target` among all items not in `exclude` (sorted
// ascending). Higher score ranks first; equal scores rank the smaller item id
// first. scores[j] belongs to item j + 1. Throws ContractError if target is
// excluded or outside [1, |V|].
std::size_t target_rank(std::span<const double> scores, ItemId target,
                        std::span<const ItemId> exclude);

struct RankMetric {
  std::size_t k = 0;
  double hr = 0.0;
  double ndcg = 0.0;
};

// HR@k = [rank <= k]; NDCG@k = 1 / log2(rank + 1) if rank <= k else 0.
std::vector<RankMetric> rank_metrics(std::size_t rank,
                                     std::span<const std::size_t> ks = kDefaultKs);

struct MetricReport {
  std::vector<std::size_t> ks;
  std::vector<double> hr;
  std::vector<double> ndcg;
  std::size_t num_users = 0;
  double mean_loss = 0.0;

  double hr_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

// Users-weighted mean of several reports over the same ks.
MetricReport combine(std::span<const MetricReport> reports);

enum class EvalMode { kValid, kTest };
EvalMode parse_eval_mode(const std::string& name);
std::string to_string(EvalMode mode);

// Next-item scores (one per item, scores[j] for item j + 1) given a history.
using Scorer = std::function<std::vector<double>(std::span<const ItemId> history)>;

// Leave-one-out evaluation. History = train prefix (plus the validation item
// in test mode); every history item except the target itself is excluded
// from the ranking.
MetricReport evaluate_with(const Scorer& scorer, const data::SplitDataset& split,
                           std::span<const UserId> users, EvalMode mode,
                           std::span<const std::size_t> ks = kDefaultKs);

MetricReport evaluate(const model::RecModel& model, const model::ParameterVector& params,
                      const data::SplitDataset& split, std::span<const UserId> users,
                      EvalMode mode, std::span<const std::size_t> ks = kDefaultKs);

// Item frequencies over the train prefixes of all users (scores[j] for item j + 1).
std::vector<double> popularity_scores(const data::SplitDataset& split);

}  // namespace pfsr::eval
