#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pfsr/diff/graph.hpp"
#include "pfsr/model/parameters.hpp"
#include "pfsr/types.hpp"

namespace pfsr::model {

struct ModelConfig {
  std::size_t embed_dim = 128;
  std::size_t state_size = 16;
  std::size_t conv_kernel = 4;
  std::size_t expansion = 4;
  std::size_t num_blocks = 1;
  double dropout = 0.1;
  std::size_t max_seq_len = 50;
  // |V|. The embedding table has num_items + 1 rows; row 0 is padding.
  std::size_t num_items = 0;

  std::size_t inner_dim() const { return expansion * embed_dim; }
  // Rank of the low-rank projection producing the step sizes.
  std::size_t dt_rank() const { return (embed_dim + 15) / 16; }

  // Throws ConfigError on an invalid combination.
  void validate() const;
};

struct ForwardOptions {
  bool train = false;
  // Source of dropout masks; required when train is set and dropout > 0.
  std::mt19937_64* rng = nullptr;
};

// Leaves of one Associative Mamba Block.
struct BlockVars {
  diff::Var in_proj;   // [d x 2Ed]
  diff::Var conv;      // [Ed x K]
  diff::Var x_proj;    // [Ed x (R + 2S)]
  diff::Var dt_proj;   // [R x Ed]
  diff::Var dt_bias;   // [Ed]
  diff::Var a_log;     // [Ed x S]; rates are -exp(a_log)
  diff::Var skip;      // [Ed]
  diff::Var out_proj;  // [Ed x d]
};

struct BoundParameters {
  diff::Var embedding;  // [(|V|+1) x d]
  std::vector<BlockVars> blocks;
  // Leaf per LayerMap group, in LayerMap order.
  std::vector<diff::Var> leaves;
};

// Intermediate values of one block, recorded for inspection in tests.
struct BlockTrace {
  diff::Var stream;
  diff::Var gate;
  diff::Var forward_channel;
  diff::Var backward_channel;
};

// Embedding -> Associative Mamba Block(s) -> weight-tied next-item scores.
//
// Each block projects H to a stream and a gate, runs the stream through
// causal conv -> SiLU -> selective scan once in time order and once on the
// time-reversed stream (re-reversed afterwards), sums the two channels,
// gates with SiLU(gate), projects back to d and adds the residual. Both
// directions share one set of kernel weights.
class RecModel {
 public:
  explicit RecModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const LayerMap& layers() const { return layers_; }

  ParameterVector init_parameters(std::uint64_t seed) const;

  BoundParameters bind(diff::Graph& g, const ParameterVector& params, bool requires_grad) const;
  // Copies the leaf gradients of the last backward() into `out` (length d_theta).
  void collect_gradients(diff::Graph& g, const BoundParameters& bound,
                         std::span<double> out) const;

  // [L x d]; id 0 gives a zero row. Throws OutOfVocabularyError for ids
  // outside [0, |V|].
  diff::Var embed(diff::Graph& g, const BoundParameters& p, std::span<const ItemId> seq,
                  const ForwardOptions& opts) const;

  diff::Var block_forward(diff::Graph& g, const BlockVars& block, diff::Var h,
                          BlockTrace* trace = nullptr) const;

  // All blocks over the full sequence (bidirectional context everywhere).
  diff::Var encode(diff::Graph& g, const BoundParameters& p, diff::Var h) const;

  // Row i equals the last row of encode() applied to rows [0, i] only, i.e.
  // the representation used to predict item i+1 from the prefix ending at i.
  diff::Var encode_prefixes(diff::Graph& g, const BoundParameters& p, diff::Var h) const;

  // Scores of every real item (column j <-> item j+1) for each row of h.
  diff::Var score_rows(diff::Graph& g, const BoundParameters& p, diff::Var h) const;

  // [|V|] scores from the last row of h.
  diff::Var predict_scores(diff::Graph& g, const BoundParameters& p, diff::Var h) const;

  // Eval-mode scores for the next item after `history` (most recent
  // max_seq_len items are used).
  std::vector<double> score_next(const ParameterVector& params,
                                 std::span<const ItemId> history) const;

  // Group name helpers.
  static std::string block_group(std::size_t block, const char* leaf);

 private:
  diff::Var channel(diff::Graph& g, const BlockVars& block, diff::Var stream) const;
  // Channel output at the last position of a length-1 sequence, evaluated
  // independently for every row.
  diff::Var pointwise_channel(diff::Graph& g, const BlockVars& block, diff::Var stream) const;
  diff::Var finish_block(diff::Graph& g, const BlockVars& block, diff::Var h, diff::Var fwd,
                         diff::Var bwd, diff::Var gate) const;

  ModelConfig config_;
  LayerMap layers_;
};

}  // namespace pfsr::model
