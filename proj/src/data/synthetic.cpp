#include "pfsr/data/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_map>

#include "pfsr/errors.hpp"

namespace pfsr::data {

void SyntheticConfig::validate() const {
  if (num_users < 1 || num_items < 1 || num_clients < 1) {
    throw ConfigError("synthetic corpus: users, items and clients must be >= 1");
  }
  if (min_len < 1 || max_len < min_len) throw ConfigError("synthetic corpus: bad length range");
  if (branching < 1) throw ConfigError("synthetic corpus: branching must be >= 1");
  if (!(restart >= 0.0 && restart <= 1.0)) throw ConfigError("synthetic corpus: restart in [0, 1]");
  if (!(shared >= 0.0 && shared <= 1.0)) throw ConfigError("synthetic corpus: shared in [0, 1]");
  if (num_clients > num_users) throw ConfigError("synthetic corpus: more clients than users");
}

InteractionDataset make_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t V = cfg.num_items;
  const std::size_t branching = std::min(cfg.branching, V);

  using Chain = std::vector<std::vector<std::size_t>>;
  std::vector<std::size_t> pool(V);
  auto draw_chain = [&] {
    Chain chain(V);
    for (std::size_t i = 0; i < V; ++i) {
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      std::shuffle(pool.begin(), pool.end(), rng);
      chain[i].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(branching));
    }
    return chain;
  };
  const Chain common = draw_chain();
  // successors[c][i] lists the next items for item i on device c.
  std::vector<Chain> successors;
  for (std::size_t c = 0; c < cfg.num_clients; ++c) successors.push_back(draw_chain());
  // Linearly decaying successor weights: branching, branching-1, ..., 1.
  std::vector<double> weights(branching);
  for (std::size_t k = 0; k < branching; ++k) weights[k] = static_cast<double>(branching - k);

  std::uniform_int_distribution<std::size_t> any_item(0, V - 1);
  std::uniform_int_distribution<std::size_t> length(cfg.min_len, cfg.max_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  std::vector<RawEvent> events;
  std::unordered_map<std::string, std::int32_t> group_of;
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    const std::size_t client = u % cfg.num_clients;
    const std::string user = "u" + std::to_string(u + 1);
    group_of[user] = static_cast<std::int32_t>(client);
    const std::size_t len = length(rng);
    std::size_t cur = any_item(rng);
    for (std::size_t t = 0; t < len; ++t) {
      events.push_back(RawEvent{user, "i" + std::to_string(cur + 1),
                                static_cast<std::int64_t>(t), events.size() + 1});
      const double r = unit(rng);
      if (r < cfg.restart) {
        cur = any_item(rng);
      } else if (r < cfg.restart + (1.0 - cfg.restart) * cfg.shared) {
        cur = common[cur][pick(rng)];
      } else {
        cur = successors[client][cur][pick(rng)];
      }
    }
  }
  const std::size_t k = std::min<std::size_t>(5, cfg.min_len);
  auto filtered = k_core_filter(std::move(events), k);
  auto ds = build_dataset(filtered, k);
  ds.user_group.reserve(ds.num_users());
  for (const auto& name : ds.user_names) ds.user_group.push_back(group_of.at(name));
  return ds;
}

}  // namespace pfsr::data
