#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pfsr/data/dataset.hpp"
#include "pfsr/eval/metrics.hpp"
#include "pfsr/losses/losses.hpp"
#include "pfsr/model/model.hpp"
#include "pfsr/vrm/vrm.hpp"

namespace pfsr::fed {

enum class Optimizer { kSgd, kAdam };
Optimizer parse_optimizer(const std::string& name);
std::string to_string(Optimizer opt);

struct FedConfig {
  std::size_t num_clients = 8;
  std::size_t rounds = 30;
  std::size_t local_epochs = 1;
  double client_fraction = 1.0;
  double lr = 1e-2;
  std::size_t batch_size = 512;
  Optimizer optimizer = Optimizer::kSgd;
  // Worker threads for clients within a round; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

struct TrainConfig {
  model::ModelConfig model;
  vrm::VrmConfig vrm;
  losses::LossConfig loss;
  FedConfig fed;
  data::PartitionStrategy partition = data::PartitionStrategy::kUniform;
  std::size_t eval_interval = 1;  // 0 disables evaluation
  eval::EvalMode eval_mode = eval::EvalMode::kTest;
  std::uint64_t seed = 42;

  void validate() const;
};

// One simulated edge device.
struct ClientState {
  std::size_t id = 0;
  std::vector<UserId> users;
  // Train prefixes of `users`, truncated to the most recent max_seq_len items.
  std::vector<ItemSequence> train;
  // Parameters retained from the client's previous local update.
  model::ParameterVector retained;
  std::uint64_t seed = 0;
  std::size_t round = 0;

  // Number of next-item targets in the local data.
  std::size_t num_samples() const;
};

struct ServerState {
  model::ParameterVector global;
  std::size_t round = 0;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  bool skipped = false;
  std::string warning;
  model::ParameterVector mixed;   // mask-mixed starting point of local training
  model::ParameterVector upload;  // parameters after local training
  std::size_t sample_count = 0;
  std::vector<double> epoch_losses;  // mean regularized loss per local epoch
  double train_loss = 0.0;           // last epoch's mean, or 0 without training
  double frac_p1 = 0.0;
  std::vector<double> group_retention;
};

// Deterministic per-stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

// Fisher -> normalize -> masks -> mix -> local_epochs of mini-batch training
// on next-item cross-entropy + Dynamic Magnitude Loss. Stores the result as
// the client's retained parameters and advances its round. A client without
// training targets is skipped and left untouched.
ClientUpdate client_local_update(ClientState& client, const model::ParameterVector& global,
                                 const TrainConfig& cfg, const model::RecModel& model);

// Sample-count-weighted elementwise mean (FedAvg).
model::ParameterVector aggregate(
    std::span<const std::pair<const model::ParameterVector*, std::size_t>> uploads);

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  std::vector<ClientUpdate> updates;  // in participant order
  std::vector<std::string> warnings;
};

// Samples ceil(fraction * N) clients, runs their local updates, aggregates
// the uploads into a new global model and advances the round counter.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TrainConfig& cfg, const model::RecModel& model);

struct MetricRow {
  std::size_t round = 0;
  std::string scope;  // client id or "global"
  eval::EvalMode mode = eval::EvalMode::kTest;
  eval::MetricReport report;
};

struct TrainingResult {
  ServerState server;
  std::vector<ClientState> clients;
  std::vector<RoundReport> rounds;  // updates keep their statistics, not their parameters
  std::vector<MetricRow> metrics;
};

struct TrainingHooks {
  // Called after each round's aggregation (and evaluation, if due).
  std::function<void(const ServerState&, std::span<const ClientState>, const RoundReport&)>
      on_round;
};

// Clients built from a partition of the split's users.
std::vector<ClientState> make_clients(const data::SplitDataset& split,
                                      const std::vector<std::vector<UserId>>& partition,
                                      const model::ParameterVector& initial,
                                      const TrainConfig& cfg);

// Per-client personalized metrics (scope = client id) and global-model
// metrics on all users (scope = "global").
std::vector<MetricRow> evaluate_round(const ServerState& server,
                                      std::span<const ClientState> clients,
                                      const data::SplitDataset& split, const TrainConfig& cfg,
                                      const model::RecModel& model);

TrainingResult run_training(const data::InteractionDataset& dataset, const TrainConfig& cfg,
                            const TrainingHooks& hooks = {});

}  // namespace pfsr::fed
