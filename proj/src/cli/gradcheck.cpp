#include "pfsr/cli/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pfsr/diff/ops.hpp"
#include "pfsr/model/objective.hpp"

namespace pfsr::cli {
namespace {

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

bool is_matrix_group(const std::string& name) {
  for (const char* leaf : {".in_proj", ".conv", ".x_proj", ".dt_proj", ".out_proj"}) {
    if (name.ends_with(leaf)) return true;
  }
  return false;
}

// Weight matrices at twice their initial range, everything else in U(-1, 1).
// At the initial values the scan sees tiny step sizes and most of its
// gradients sit below the finite-difference noise floor.
model::ParameterVector test_point(const model::RecModel& model, std::uint64_t seed) {
  auto params = model.init_parameters(seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (const auto& g : model.layers().groups()) {
    auto span = params.values().subspan(g.offset, g.length);
    if (is_matrix_group(g.name)) {
      for (double& v : span) v *= 2.0;
    } else {
      for (double& v : span) v = unit(rng);
    }
  }
  return params;
}

// Cross-entropy of every row of the full bidirectional encoding, so the
// reverse scan carries gradient at every position.
double full_sequence_loss(const model::RecModel& model, const model::ParameterVector& params,
                          std::span<const ItemId> seq, std::span<const std::size_t> targets,
                          std::span<double> grad, std::optional<diff::GradientFault> fault) {
  diff::Graph g;
  g.set_fault(fault);
  auto bound = model.bind(g, params, !grad.empty());
  diff::Var h = model.embed(g, bound, seq, model::ForwardOptions{});
  diff::Var scores = model.score_rows(g, bound, model.encode(g, bound, h));
  diff::Var loss = diff::cross_entropy(g, scores, targets, 1.0);
  if (!grad.empty()) {
    g.backward(loss);
    model.collect_gradients(g, bound, grad);
  }
  return g.value(loss).item();
}

// The per-target terms of either objective, forward only. Finite differences
// are taken term by term and then summed, which keeps rounding at the scale
// of a single term rather than the whole sum.
std::vector<double> term_losses(const model::RecModel& model, const model::ParameterVector& params,
                                std::span<const ItemId> seq, bool full,
                                std::span<const std::size_t> row_targets) {
  diff::Graph g;
  auto bound = model.bind(g, params, false);
  const model::ForwardOptions eval_mode{};
  std::vector<double> out;
  if (full) {
    diff::Var h = model.embed(g, bound, seq, eval_mode);
    const auto& scores = g.value(model.score_rows(g, bound, model.encode(g, bound, h)));
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      out.push_back(losses::rec_loss(scores.row(r), static_cast<ItemId>(row_targets[r] + 1)));
    }
  } else {
    diff::Var h = model.embed(g, bound, seq.first(seq.size() - 1), eval_mode);
    const auto& scores = g.value(model.score_rows(g, bound, model.encode_prefixes(g, bound, h)));
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      out.push_back(losses::rec_loss(scores.row(r), seq[r + 1]));
    }
  }
  return out;
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(),
                     [&](const GroupCheck& g) { return g.max_rel_error < tolerance; });
}

model::ModelConfig gradcheck_model_config(std::size_t num_blocks) {
  model::ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.state_size = 4;
  cfg.conv_kernel = 4;
  cfg.expansion = 2;
  cfg.num_blocks = num_blocks;
  cfg.dropout = 0.1;
  cfg.max_seq_len = 6;
  cfg.num_items = 20;
  return cfg;
}

GradcheckReport run_gradcheck(const model::ModelConfig& cfg, const losses::LossConfig& loss,
                              std::uint64_t seed, std::optional<diff::GradientFault> fault) {
  model::RecModel model(cfg);
  auto params = test_point(model, seed);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<ItemId> item(1, static_cast<ItemId>(cfg.num_items));
  ItemSequence seq(cfg.max_seq_len);
  for (auto& v : seq) v = item(rng);
  model::SequenceTargets next{seq, {}};
  for (std::size_t p = 1; p < seq.size(); ++p) next.positions.push_back(p);
  std::vector<std::size_t> row_targets(seq.size());
  for (auto& t : row_targets) t = static_cast<std::size_t>(item(rng) - 1);

  // Two objectives: the training loss and the full-sequence loss.
  const model::ForwardOptions eval_mode{};
  auto objective = [&](int which, std::span<double> grad, std::optional<diff::GradientFault> f) {
    if (which == 0) {
      return model::next_item_loss(model, params, std::span(&next, 1), 1.0, eval_mode, grad, f);
    }
    return full_sequence_loss(model, params, seq, row_targets, grad, f);
  };

  GradcheckReport report;
  for (const auto& g : model.layers().groups()) report.groups.push_back({g.name, g.length, 0.0});
  auto values = params.values();
  for (int which = 0; which < 2; ++which) {
    std::vector<double> analytic(params.size());
    objective(which, analytic, fault);
    for (std::size_t gi = 0; gi < model.layers().size(); ++gi) {
      const auto& g = model.layers().groups()[gi];
      for (std::size_t i = g.offset; i < g.offset + g.length; ++i) {
        const double saved = values[i];
        values[i] = saved + kGradcheckStep;
        const auto up = term_losses(model, params, seq, which == 1, row_targets);
        values[i] = saved - kGradcheckStep;
        const auto down = term_losses(model, params, seq, which == 1, row_targets);
        values[i] = saved;
        double numeric = 0.0;
        for (std::size_t t = 0; t < up.size(); ++t) {
          numeric += (up[t] - down[t]) / (2.0 * kGradcheckStep);
        }
        auto& worst = report.groups[gi].max_rel_error;
        worst = std::max(worst, rel_error(analytic[i], numeric));
      }
    }
  }

  // Dynamic Magnitude Loss on random anchors and Fisher weights.
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto prev = params;
  auto global = params;
  vrm::FisherVector fisher{std::vector<double>(params.size()), true};
  for (std::size_t i = 0; i < params.size(); ++i) {
    prev.values()[i] += jitter(rng);
    global.values()[i] += jitter(rng);
    fisher.values[i] = unit(rng);
  }
  std::vector<double> dml_grad(params.size(), 0.0);
  losses::add_dynamic_magnitude_gradient(params, prev, global, fisher, loss, dml_grad);
  GroupCheck dml{"dml", params.size(), 0.0};
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + kGradcheckStep;
    const double up = losses::dynamic_magnitude_loss(params, prev, global, fisher, loss);
    values[i] = saved - kGradcheckStep;
    const double down = losses::dynamic_magnitude_loss(params, prev, global, fisher, loss);
    values[i] = saved;
    dml.max_rel_error =
        std::max(dml.max_rel_error, rel_error(dml_grad[i], (up - down) / (2.0 * kGradcheckStep)));
  }
  report.groups.push_back(dml);
  return report;
}

}  // namespace pfsr::cli
