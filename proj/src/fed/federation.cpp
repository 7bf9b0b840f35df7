#include "pfsr/fed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "pfsr/errors.hpp"
#include "pfsr/model/objective.hpp"

namespace pfsr::fed {
namespace {

using model::ParameterVector;

struct Sample {
  std::size_t seq = 0;
  std::size_t pos = 0;
};

std::vector<Sample> enumerate_samples(const ClientState& client) {
  std::vector<Sample> out;
  for (std::size_t s = 0; s < client.train.size(); ++s)
    for (std::size_t p = 1; p < client.train[s].size(); ++p) out.push_back({s, p});
  return out;
}

std::vector<model::SequenceTargets> make_batch(const ClientState& client,
                                               std::span<const Sample> samples) {
  std::map<std::size_t, std::vector<std::size_t>> by_seq;
  for (const auto& s : samples) by_seq[s.seq].push_back(s.pos);
  std::vector<model::SequenceTargets> batch;
  batch.reserve(by_seq.size());
  for (auto& [seq, positions] : by_seq) {
    std::sort(positions.begin(), positions.end());
    batch.push_back({client.train[seq], std::move(positions)});
  }
  return batch;
}

class Stepper {
 public:
  Stepper(Optimizer kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
    if (kind_ == Optimizer::kAdam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> theta, std::span<const double> grad) {
    if (kind_ == Optimizer::kSgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * grad[i];
      return;
    }
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  Optimizer kind_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

std::string to_string(Optimizer opt) { return opt == Optimizer::kSgd ? "sgd" : "adam"; }

void FedConfig::validate() const {
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) {
    throw ConfigError("client_fraction must be in (0, 1]");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

void TrainConfig::validate() const {
  vrm.validate();
  loss.validate();
  fed.validate();
}

std::size_t ClientState::num_samples() const {
  std::size_t n = 0;
  for (const auto& s : train) n += s.empty() ? 0 : s.size() - 1;
  return n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

ClientUpdate client_local_update(ClientState& client, const ParameterVector& global,
                                 const TrainConfig& cfg, const model::RecModel& model) {
  model::require_compatible(client.retained, global, "client_local_update");
  ClientUpdate up;
  up.client_id = client.id;
  auto samples = enumerate_samples(client);
  up.sample_count = samples.size();
  if (samples.empty()) {
    up.skipped = true;
    up.warning = "client " + std::to_string(client.id) + " has no training targets; skipped";
    return up;
  }

  std::mt19937_64 rng(derive_seed(client.seed, client.id, client.round + 1));
  const std::size_t bs = cfg.fed.batch_size;

  // Fisher on the retained parameters from the previous round.
  std::shuffle(samples.begin(), samples.end(), rng);
  std::vector<std::vector<model::SequenceTargets>> fisher_batches;
  for (std::size_t start = 0;
       start < samples.size() && fisher_batches.size() < cfg.vrm.fisher_batches; start += bs) {
    const std::size_t n = std::min(bs, samples.size() - start);
    fisher_batches.push_back(make_batch(client, std::span(samples).subspan(start, n)));
  }
  const auto fisher = vrm::fisher_values(model, client.retained, fisher_batches);
  const auto fisher_hat = vrm::layerwise_normalize(fisher, model.layers());
  const auto masks = vrm::build_masks(fisher_hat, cfg.vrm.lambda);
  up.frac_p1 = masks.retained_fraction();
  up.group_retention = vrm::group_retention(masks, model.layers());
  up.mixed = vrm::mix_parameters(client.retained, global, masks);

  ParameterVector theta = up.mixed;
  Stepper stepper(cfg.fed.optimizer, cfg.fed.lr, theta.size());
  std::vector<double> grad(theta.size());
  model::ForwardOptions train_opts{true, &rng};
  const bool summed = cfg.loss.reduction == losses::Reduction::kSum;
  for (std::size_t epoch = 0; epoch < cfg.fed.local_epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    double rec_total = 0.0;
    double dml_total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < samples.size(); start += bs) {
      const std::size_t n = std::min(bs, samples.size() - start);
      const auto batch = make_batch(client, std::span(samples).subspan(start, n));
      const double weight = summed ? 1.0 : 1.0 / static_cast<double>(n);
      const double rec = model::next_item_loss(model, theta, batch, weight, train_opts, grad);
      dml_total +=
          losses::dynamic_magnitude_loss(theta, client.retained, global, fisher_hat, cfg.loss);
      losses::add_dynamic_magnitude_gradient(theta, client.retained, global, fisher_hat, cfg.loss,
                                             grad);
      stepper.step(theta.values(), grad);
      rec_total += summed ? rec : rec * static_cast<double>(n);
      ++steps;
    }
    // Mean cross-entropy per target plus the mean regularizer per step.
    up.epoch_losses.push_back(rec_total / static_cast<double>(samples.size()) +
                              dml_total / static_cast<double>(steps));
  }
  if (!up.epoch_losses.empty()) up.train_loss = up.epoch_losses.back();

  for (double v : theta.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("client " + std::to_string(client.id) + ": non-finite parameters");
    }
  }
  client.retained = theta;
  client.round += 1;
  up.upload = std::move(theta);
  return up;
}

ParameterVector aggregate(std::span<const std::pair<const ParameterVector*, std::size_t>> uploads) {
  if (uploads.empty()) throw ContractError("aggregate: no uploads");
  const ParameterVector& first = *uploads.front().first;
  for (const auto& [p, count] : uploads) model::require_compatible(first, *p, "aggregate");
  // Running weighted mean: identical uploads reproduce themselves exactly.
  ParameterVector avg = first;
  double seen = static_cast<double>(uploads.front().second);
  for (std::size_t i = 1; i < uploads.size(); ++i) {
    const double w = static_cast<double>(uploads[i].second);
    if (w <= 0.0) continue;
    seen += w;
    const double frac = w / seen;
    const auto src = uploads[i].first->values();
    auto dst = avg.values();
    for (std::size_t m = 0; m < dst.size(); ++m) dst[m] += (src[m] - dst[m]) * frac;
  }
  if (seen <= 0.0) throw ContractError("aggregate: total sample count is zero");
  return avg;
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TrainConfig& cfg, const model::RecModel& model) {
  if (clients.empty()) throw ContractError("run_round: no clients");
  RoundReport report;
  report.round = server.round + 1;

  const std::size_t n = clients.size();
  const auto m = static_cast<std::size_t>(
      std::ceil(cfg.fed.client_fraction * static_cast<double>(n) - 1e-12));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (m < n) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xfedULL, report.round));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::max<std::size_t>(m, 1));
    std::sort(order.begin(), order.end());
  }
  report.participants = order;
  report.updates.resize(order.size());

  auto work = [&](std::size_t slot) {
    ClientState& c = clients[order[slot]];
    try {
      report.updates[slot] = client_local_update(c, server.global, cfg, model);
    } catch (const Error& e) {
      ClientUpdate failed;
      failed.client_id = c.id;
      failed.skipped = true;
      failed.warning = "client " + std::to_string(c.id) + " failed: " + e.what();
      report.updates[slot] = std::move(failed);
    }
  };
  const std::size_t workers = std::min(cfg.fed.threads, order.size());
  if (workers <= 1) {
    for (std::size_t s = 0; s < order.size(); ++s) work(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < order.size(); s = next++) work(s);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<std::pair<const ParameterVector*, std::size_t>> uploads;
  for (const auto& up : report.updates) {
    if (up.skipped) {
      report.warnings.push_back(up.warning);
      continue;
    }
    uploads.emplace_back(&up.upload, up.sample_count);
  }
  if (!uploads.empty()) server.global = aggregate(uploads);
  server.round = report.round;
  return report;
}

std::vector<ClientState> make_clients(const data::SplitDataset& split,
                                      const std::vector<std::vector<UserId>>& partition,
                                      const ParameterVector& initial, const TrainConfig& cfg) {
  std::vector<ClientState> clients;
  clients.reserve(partition.size());
  for (std::size_t c = 0; c < partition.size(); ++c) {
    ClientState st;
    st.id = c;
    st.users = partition[c];
    for (UserId u : st.users) {
      const auto& train = split.users.at(static_cast<std::size_t>(u - 1)).train;
      const std::size_t keep = std::min(train.size(), cfg.model.max_seq_len);
      st.train.emplace_back(train.end() - static_cast<std::ptrdiff_t>(keep), train.end());
    }
    st.retained = initial;
    st.seed = derive_seed(cfg.seed, 0xc11e47ULL, c);
    clients.push_back(std::move(st));
  }
  return clients;
}

std::vector<MetricRow> evaluate_round(const ServerState& server,
                                      std::span<const ClientState> clients,
                                      const data::SplitDataset& split, const TrainConfig& cfg,
                                      const model::RecModel& model) {
  std::vector<MetricRow> rows;
  std::vector<UserId> all_users;
  for (const auto& c : clients) {
    all_users.insert(all_users.end(), c.users.begin(), c.users.end());
    if (c.users.empty()) continue;
    rows.push_back({server.round, std::to_string(c.id), cfg.eval_mode,
                    eval::evaluate(model, c.retained, split, c.users, cfg.eval_mode)});
  }
  std::sort(all_users.begin(), all_users.end());
  rows.push_back({server.round, "global", cfg.eval_mode,
                  eval::evaluate(model, server.global, split, all_users, cfg.eval_mode)});
  return rows;
}

TrainingResult run_training(const data::InteractionDataset& dataset, const TrainConfig& cfg_in,
                            const TrainingHooks& hooks) {
  TrainConfig cfg = cfg_in;
  cfg.model.num_items = dataset.num_items();
  cfg.validate();
  model::RecModel model(cfg.model);
  const auto split = data::leave_one_out_split(dataset);
  const auto partition =
      data::partition_clients(dataset, cfg.fed.num_clients, cfg.partition, cfg.seed);

  TrainingResult result;
  result.server.global = model.init_parameters(derive_seed(cfg.seed, 0x1417ULL, 0));
  result.clients = make_clients(split, partition, result.server.global, cfg);

  for (std::size_t t = 0; t < cfg.fed.rounds; ++t) {
    auto report = run_round(result.server, result.clients, cfg, model);
    const std::size_t r = result.server.round;
    if (cfg.eval_interval > 0 && (r % cfg.eval_interval == 0 || r == cfg.fed.rounds)) {
      auto rows = evaluate_round(result.server, result.clients, split, cfg, model);
      result.metrics.insert(result.metrics.end(), rows.begin(), rows.end());
    }
    if (hooks.on_round) hooks.on_round(result.server, result.clients, report);
    // Parameter vectors live on in the client and server states.
    for (auto& up : report.updates) {
      up.mixed = {};
      up.upload = {};
    }
    result.rounds.push_back(std::move(report));
  }
  return result;
}

}  // namespace pfsr::fed
