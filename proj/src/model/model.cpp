#include "pfsr/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "pfsr/diff/ops.hpp"
#include "pfsr/errors.hpp"

namespace pfsr::model {

using diff::Graph;
using diff::Shape;
using diff::Tensor;
using diff::Var;

void ModelConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (state_size < 1) throw ConfigError("state_size must be >= 1");
  if (conv_kernel < 1) throw ConfigError("conv_kernel must be >= 1");
  if (expansion < 1) throw ConfigError("expansion must be >= 1");
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
  if (num_items < 1) throw ConfigError("num_items must be >= 1");
}

std::string RecModel::block_group(std::size_t block, const char* leaf) {
  return "block" + std::to_string(block) + "." + leaf;
}

RecModel::RecModel(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t ed = config_.inner_dim();
  const std::size_t S = config_.state_size;
  const std::size_t R = config_.dt_rank();
  layers_.append("embedding", (config_.num_items + 1) * d);
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    layers_.append(block_group(b, "in_proj"), d * 2 * ed);
    layers_.append(block_group(b, "conv"), ed * config_.conv_kernel);
    layers_.append(block_group(b, "x_proj"), ed * (R + 2 * S));
    layers_.append(block_group(b, "dt_proj"), R * ed);
    layers_.append(block_group(b, "dt_bias"), ed);
    layers_.append(block_group(b, "A_log"), ed * S);
    layers_.append(block_group(b, "D"), ed);
    layers_.append(block_group(b, "out_proj"), ed * d);
  }
}

ParameterVector RecModel::init_parameters(std::uint64_t seed) const {
  ParameterVector p(layers_);
  std::mt19937_64 rng(seed);
  auto uniform_fill = [&rng](std::span<double> dst, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : dst) v = dist(rng);
  };
  const std::size_t d = config_.embed_dim;
  const std::size_t ed = config_.inner_dim();
  const std::size_t S = config_.state_size;
  const std::size_t R = config_.dt_rank();

  auto emb = p.group("embedding");
  uniform_fill(emb.subspan(d), 1.0 / std::sqrt(static_cast<double>(d)));

  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    uniform_fill(p.group(block_group(b, "in_proj")), 1.0 / std::sqrt(static_cast<double>(d)));
    uniform_fill(p.group(block_group(b, "conv")),
                 1.0 / std::sqrt(static_cast<double>(config_.conv_kernel)));
    uniform_fill(p.group(block_group(b, "x_proj")), 1.0 / std::sqrt(static_cast<double>(ed)));
    uniform_fill(p.group(block_group(b, "dt_proj")), 1.0 / std::sqrt(static_cast<double>(R)));

    // Step sizes log-uniform in [1e-3, 1e-1], stored through inverse softplus.
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
    for (double& v : p.group(block_group(b, "dt_bias"))) {
      const double dt = std::exp(log_dt(rng));
      v = dt + std::log(-std::expm1(-dt));
    }
    auto a_log = p.group(block_group(b, "A_log"));
    for (std::size_t c = 0; c < ed; ++c)
      for (std::size_t s = 0; s < S; ++s) a_log[c * S + s] = std::log(static_cast<double>(s + 1));
    std::fill_n(p.group(block_group(b, "D")).begin(), ed, 1.0);
    uniform_fill(p.group(block_group(b, "out_proj")), 1.0 / std::sqrt(static_cast<double>(ed)));
  }
  return p;
}

BoundParameters RecModel::bind(Graph& g, const ParameterVector& params,
                               bool requires_grad) const {
  if (!(params.layers() == layers_)) {
    throw ContractError("bind: parameter layer map does not match the model");
  }
  const std::size_t d = config_.embed_dim;
  const std::size_t ed = config_.inner_dim();
  const std::size_t S = config_.state_size;
  const std::size_t R = config_.dt_rank();

  BoundParameters out;
  auto leaf = [&](const std::string& name, Shape shape) {
    auto values = params.group(name);
    Var v = g.leaf(Tensor(std::move(shape), std::vector<double>(values.begin(), values.end())),
                   requires_grad);
    out.leaves.push_back(v);
    return v;
  };
  out.embedding = leaf("embedding", {config_.num_items + 1, d});
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    BlockVars bv;
    bv.in_proj = leaf(block_group(b, "in_proj"), {d, 2 * ed});
    bv.conv = leaf(block_group(b, "conv"), {ed, config_.conv_kernel});
    bv.x_proj = leaf(block_group(b, "x_proj"), {ed, R + 2 * S});
    bv.dt_proj = leaf(block_group(b, "dt_proj"), {R, ed});
    bv.dt_bias = leaf(block_group(b, "dt_bias"), {ed});
    bv.a_log = leaf(block_group(b, "A_log"), {ed, S});
    bv.skip = leaf(block_group(b, "D"), {ed});
    bv.out_proj = leaf(block_group(b, "out_proj"), {ed, d});
    out.blocks.push_back(bv);
  }
  return out;
}

void RecModel::collect_gradients(Graph& g, const BoundParameters& bound,
                                 std::span<double> out) const {
  if (out.size() != layers_.total()) throw DimensionError("collect_gradients: size mismatch");
  const auto& groups = layers_.groups();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Tensor& grad = g.grad(bound.leaves[i]);
    std::copy(grad.values().begin(), grad.values().end(), out.begin() + groups[i].offset);
  }
}

Var RecModel::embed(Graph& g, const BoundParameters& p, std::span<const ItemId> seq,
                    const ForwardOptions& opts) const {
  if (seq.empty()) throw ContractError("embed: empty sequence");
  for (ItemId id : seq) {
    if (id < 0 || static_cast<std::size_t>(id) > config_.num_items) {
      throw OutOfVocabularyError("item id " + std::to_string(id) + " outside [0, " +
                                 std::to_string(config_.num_items) + "]");
    }
  }
  Var h = diff::gather_rows(g, p.embedding, seq, 0);
  if (opts.train && config_.dropout > 0.0) {
    if (!opts.rng) throw ContractError("embed: training-mode dropout needs an rng");
    std::bernoulli_distribution keep_dist(1.0 - config_.dropout);
    std::vector<std::uint8_t> keep(g.value(h).size());
    for (auto& k : keep) k = keep_dist(*opts.rng) ? 1 : 0;
    h = diff::dropout(g, h, keep, config_.dropout);
  }
  return h;
}

Var RecModel::channel(Graph& g, const BlockVars& block, Var stream) const {
  const std::size_t S = config_.state_size;
  const std::size_t R = config_.dt_rank();
  Var c = diff::silu(g, diff::causal_depthwise_conv(g, stream, block.conv));
  Var proj = diff::matmul(g, c, block.x_proj);
  Var dt_low = diff::slice_cols(g, proj, 0, R);
  Var B = diff::slice_cols(g, proj, R, S);
  Var C = diff::slice_cols(g, proj, R + S, S);
  Var delta =
      diff::softplus(g, diff::add_row_broadcast(g, diff::matmul(g, dt_low, block.dt_proj),
                                                block.dt_bias));
  Var A = diff::neg_exp(g, block.a_log);
  return diff::selective_scan(g, c, delta, A, B, C, block.skip);
}

Var RecModel::pointwise_channel(Graph& g, const BlockVars& block, Var stream) const {
  // A length-1 sequence sees only the first conv tap, and the scan collapses
  // to y = u * (delta * <B, C> + D).
  const std::size_t S = config_.state_size;
  const std::size_t R = config_.dt_rank();
  Var tap0 = diff::slice_cols(g, block.conv, 0, 1);
  Var c = diff::silu(g, diff::causal_depthwise_conv(g, stream, tap0));
  Var proj = diff::matmul(g, c, block.x_proj);
  Var dt_low = diff::slice_cols(g, proj, 0, R);
  Var B = diff::slice_cols(g, proj, R, S);
  Var C = diff::slice_cols(g, proj, R + S, S);
  Var delta =
      diff::softplus(g, diff::add_row_broadcast(g, diff::matmul(g, dt_low, block.dt_proj),
                                                block.dt_bias));
  Var gain = diff::add_row_broadcast(g, diff::mul_col_broadcast(g, delta, diff::row_dot(g, B, C)),
                                     block.skip);
  return diff::mul(g, c, gain);
}

Var RecModel::finish_block(Graph& g, const BlockVars& block, Var h, Var fwd, Var bwd,
                           Var gate) const {
  Var mixed = diff::mul(g, diff::add(g, fwd, bwd), diff::silu(g, gate));
  return diff::add(g, h, diff::matmul(g, mixed, block.out_proj));
}

Var RecModel::block_forward(Graph& g, const BlockVars& block, Var h, BlockTrace* trace) const {
  const std::size_t ed = config_.inner_dim();
  Var x = diff::matmul(g, h, block.in_proj);
  Var stream = diff::slice_cols(g, x, 0, ed);
  Var gate = diff::slice_cols(g, x, ed, ed);
  Var fwd = channel(g, block, stream);
  Var bwd = diff::reverse_rows(g, channel(g, block, diff::reverse_rows(g, stream)));
  if (trace) *trace = BlockTrace{stream, gate, fwd, bwd};
  return finish_block(g, block, h, fwd, bwd, gate);
}

Var RecModel::encode(Graph& g, const BoundParameters& p, Var h) const {
  for (const auto& block : p.blocks) h = block_forward(g, block, h);
  return h;
}

Var RecModel::encode_prefixes(Graph& g, const BoundParameters& p, Var h) const {
  const std::size_t L = g.value(h).rows();
  if (p.blocks.size() == 1) {
    // The forward channel is causal, so its full-sequence output at i already
    // equals the prefix output; the backward channel at a prefix's last
    // position only sees that position.
    const BlockVars& block = p.blocks.front();
    const std::size_t ed = config_.inner_dim();
    Var x = diff::matmul(g, h, block.in_proj);
    Var stream = diff::slice_cols(g, x, 0, ed);
    Var gate = diff::slice_cols(g, x, ed, ed);
    Var fwd = channel(g, block, stream);
    Var bwd = pointwise_channel(g, block, stream);
    return finish_block(g, block, h, fwd, bwd, gate);
  }
  std::vector<Var> rows;
  rows.reserve(L);
  for (std::size_t i = 0; i < L; ++i) {
    Var enc = encode(g, p, diff::slice_rows(g, h, 0, i + 1));
    rows.push_back(diff::slice_rows(g, enc, i, 1));
  }
  return diff::concat_rows(g, rows);
}

Var RecModel::score_rows(Graph& g, const BoundParameters& p, Var h) const {
  Var items = diff::slice_rows(g, p.embedding, 1, config_.num_items);
  return diff::matmul_bt(g, h, items);
}

Var RecModel::predict_scores(Graph& g, const BoundParameters& p, Var h) const {
  const std::size_t L = g.value(h).rows();
  return score_rows(g, p, diff::slice_rows(g, h, L - 1, 1));
}

std::vector<double> RecModel::score_next(const ParameterVector& params,
                                         std::span<const ItemId> history) const {
  if (history.empty()) throw ContractError("score_next: empty history");
  if (history.size() > config_.max_seq_len) history = history.last(config_.max_seq_len);
  Graph g;
  auto bound = bind(g, params, false);
  Var h = embed(g, bound, history, ForwardOptions{});
  Var scores = predict_scores(g, bound, encode(g, bound, h));
  auto v = g.value(scores).values();
  return {v.begin(), v.end()};
}

}  // namespace pfsr::model
