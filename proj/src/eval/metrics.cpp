#include "pfsr/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "pfsr/errors.hpp"
#include "pfsr/losses/losses.hpp"

namespace pfsr::eval {

std::size_t target_rank(std::span<const double> scores, ItemId target,
                        std::span<const ItemId> exclude) {
  if (target < 1 || static_cast<std::size_t>(target) > scores.size()) {
    throw ContractError("target_rank: target " + std::to_string(target) + " outside [1, " +
                        std::to_string(scores.size()) + "]");
  }
  if (std::binary_search(exclude.begin(), exclude.end(), target)) {
    throw ContractError("target_rank: target is in the exclusion set");
  }
  const double ts = scores[static_cast<std::size_t>(target - 1)];
  std::size_t ahead = 0;
  auto ex = exclude.begin();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const auto item = static_cast<ItemId>(j + 1);
    while (ex != exclude.end() && *ex < item) ++ex;
    if (ex != exclude.end() && *ex == item) continue;
    if (scores[j] > ts || (scores[j] == ts && item < target)) ++ahead;
  }
  return ahead + 1;
}

std::vector<RankMetric> rank_metrics(std::size_t rank, std::span<const std::size_t> ks) {
  if (rank < 1) throw ContractError("rank_metrics: rank must be >= 1");
  std::vector<RankMetric> out;
  out.reserve(ks.size());
  for (std::size_t k : ks) {
    RankMetric m{k, 0.0, 0.0};
    if (rank <= k) {
      m.hr = 1.0;
      m.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    out.push_back(m);
  }
  return out;
}

double MetricReport::hr_at(std::size_t k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ContractError("MetricReport: k = " + std::to_string(k) + " not evaluated");
  return hr[static_cast<std::size_t>(it - ks.begin())];
}

double MetricReport::ndcg_at(std::size_t k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ContractError("MetricReport: k = " + std::to_string(k) + " not evaluated");
  return ndcg[static_cast<std::size_t>(it - ks.begin())];
}

MetricReport combine(std::span<const MetricReport> reports) {
  if (reports.empty()) throw ContractError("combine: no reports");
  MetricReport out;
  out.ks = reports.front().ks;
  out.hr.assign(out.ks.size(), 0.0);
  out.ndcg.assign(out.ks.size(), 0.0);
  for (const auto& r : reports) {
    if (r.ks != out.ks) throw ContractError("combine: reports use different ks");
    const double w = static_cast<double>(r.num_users);
    for (std::size_t i = 0; i < out.ks.size(); ++i) {
      out.hr[i] += w * r.hr[i];
      out.ndcg[i] += w * r.ndcg[i];
    }
    out.mean_loss += w * r.mean_loss;
    out.num_users += r.num_users;
  }
  if (out.num_users > 0) {
    const double inv = 1.0 / static_cast<double>(out.num_users);
    for (auto& v : out.hr) v *= inv;
    for (auto& v : out.ndcg) v *= inv;
    out.mean_loss *= inv;
  }
  return out;
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "valid") return EvalMode::kValid;
  if (name == "test") return EvalMode::kTest;
  throw ConfigError("unknown eval mode '" + name + "' (expected valid|test)");
}

std::string to_string(EvalMode mode) { return mode == EvalMode::kValid ? "valid" : "test"; }

MetricReport evaluate_with(const Scorer& scorer, const data::SplitDataset& split,
                           std::span<const UserId> users, EvalMode mode,
                           std::span<const std::size_t> ks) {
  if (users.empty()) throw ContractError("evaluate: empty user set");
  MetricReport report;
  report.ks.assign(ks.begin(), ks.end());
  report.hr.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  ItemSequence history;
  std::vector<ItemId> exclude;
  for (UserId u : users) {
    if (u < 1 || static_cast<std::size_t>(u) > split.users.size()) {
      throw ContractError("evaluate: unknown user " + std::to_string(u));
    }
    const auto& us = split.users[static_cast<std::size_t>(u - 1)];
    history = us.train;
    ItemId target = us.valid;
    if (mode == EvalMode::kTest) {
      history.push_back(us.valid);
      target = us.test;
    }
    const auto scores = scorer(history);
    if (scores.size() != split.num_items) throw DimensionError("evaluate: scorer returned wrong size");
    exclude = history;
    std::sort(exclude.begin(), exclude.end());
    exclude.erase(std::unique(exclude.begin(), exclude.end()), exclude.end());
    std::erase(exclude, target);
    const auto rank = target_rank(scores, target, exclude);
    const auto metrics = rank_metrics(rank, ks);
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      report.hr[i] += metrics[i].hr;
      report.ndcg[i] += metrics[i].ndcg;
    }
    report.mean_loss += losses::rec_loss(scores, target);
    ++report.num_users;
  }
  const double inv = 1.0 / static_cast<double>(report.num_users);
  for (auto& v : report.hr) v *= inv;
  for (auto& v : report.ndcg) v *= inv;
  report.mean_loss *= inv;
  return report;
}

MetricReport evaluate(const model::RecModel& model, const model::ParameterVector& params,
                      const data::SplitDataset& split, std::span<const UserId> users,
                      EvalMode mode, std::span<const std::size_t> ks) {
  return evaluate_with(
      [&](std::span<const ItemId> history) { return model.score_next(params, history); }, split,
      users, mode, ks);
}

std::vector<double> popularity_scores(const data::SplitDataset& split) {
  std::vector<double> counts(split.num_items, 0.0);
  for (const auto& u : split.users) {
    for (ItemId v : u.train) counts[static_cast<std::size_t>(v - 1)] += 1.0;
  }
  return counts;
}

}  // namespace pfsr::eval
