#include "pfsr/cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pfsr/cli/gradcheck.hpp"
#include "pfsr/errors.hpp"

namespace pfsr::cli {
namespace {

namespace fs = std::filesystem;

constexpr std::size_t kMaxPrintedWarnings = 20;

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string metric_row(const fed::MetricRow& row) {
  const auto& r = row.report;
  return std::to_string(row.round) + "," + row.scope + "," + eval::to_string(row.mode) + "," +
         fixed(r.hr_at(5)) + "," + fixed(r.hr_at(10)) + "," + fixed(r.ndcg_at(5)) + "," +
         fixed(r.ndcg_at(10)) + "," + std::to_string(r.num_users);
}

constexpr const char* kMetricHeader = "round,scope,mode,HR@5,HR@10,NDCG@5,NDCG@10,users";

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

fs::path prepare_output_dir(const RunConfig& cfg) {
  const fs::path dir = resolve_output_dir(cfg);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  auto echo = open_output(dir / "config.txt");
  echo << render_config(cfg);
  return dir;
}

void require_input(const std::string& path, const char* key) {
  if (!path.empty() && !fs::exists(path)) {
    throw ConfigError(std::string(key) + ": no such file '" + path + "'");
  }
}

// Validation that needs no data; ConfigError maps to the usage exit code.
void precheck(const RunConfig& cfg) {
  cfg.validate();
  require_input(cfg.cache_path, "cache_path");
  if (cfg.cache_path.empty()) require_input(cfg.data_path, "data_path");
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

std::string checkpoint_name(const std::string& who, std::size_t round) {
  return who + "_round" + std::to_string(round) + ".ckpt";
}

}  // namespace

data::InteractionDataset load_dataset(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.cache_path.empty()) return data::load_cache(cfg.cache_path).dataset;
  if (!cfg.data_path.empty()) {
    auto loaded = data::load_interactions(cfg.data_path);
    for (std::size_t i = 0; i < loaded.warnings.size() && i < kMaxPrintedWarnings; ++i) {
      err << "warning: " << cfg.data_path << ":" << loaded.warnings[i].line << ": "
          << loaded.warnings[i].message << "\n";
    }
    if (loaded.warnings.size() > kMaxPrintedWarnings) {
      err << "warning: " << loaded.warnings.size() - kMaxPrintedWarnings
          << " more malformed lines skipped\n";
    }
    auto events = data::k_core_filter(std::move(loaded.events), cfg.k_core);
    return data::build_dataset(events, cfg.k_core);
  }
  return data::make_synthetic(cfg.synthetic);
}

int cmd_prep(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    precheck(cfg);
    const auto ds = load_dataset(cfg, err);
    const fs::path dir = prepare_output_dir(cfg);
    const fs::path cache = dir / "dataset.bin";
    data::save_cache(ds, cfg.train.model.max_seq_len, cache);
    out << "cache " << cache.string() << "\n";
    out << "users " << ds.num_users() << "\n";
    out << "items " << ds.num_items() << "\n";
    out << "interactions " << ds.num_interactions() << "\n";
    const auto parts = data::partition_clients(ds, cfg.train.fed.num_clients, cfg.train.partition,
                                               cfg.train.seed);
    for (std::size_t c = 0; c < parts.size(); ++c) {
      std::size_t events = 0;
      for (UserId u : parts[c]) events += ds.sequences[static_cast<std::size_t>(u - 1)].size();
      out << "client " << c << " users " << parts[c].size() << " interactions " << events << "\n";
    }
    return kExitOk;
  });
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    precheck(cfg);
    const auto ds = load_dataset(cfg, err);
    const fs::path dir = prepare_output_dir(cfg);
    const fs::path ckpt_dir = dir / "checkpoints";
    fs::create_directories(ckpt_dir);

    auto rounds_csv = open_output(dir / "rounds.csv");
    rounds_csv << "round,client_id,train_loss,frac_p1,samples\n";
    std::ofstream masks_csv;
    if (cfg.mask_dump) {
      masks_csv = open_output(dir / "masks.csv");
      masks_csv << "round,client,group,frac_retained\n";
    }
    auto metrics_csv = open_output(dir / "metrics.csv");
    metrics_csv << kMetricHeader << "\n";

    model::ModelConfig mc = cfg.train.model;
    mc.num_items = ds.num_items();
    const model::LayerMap layers = model::RecModel(mc).layers();
    const std::size_t total_rounds = cfg.train.fed.rounds;

    fed::TrainingHooks hooks;
    hooks.on_round = [&](const fed::ServerState& server, std::span<const fed::ClientState> clients,
                         const fed::RoundReport& report) {
      double loss_sum = 0.0;
      std::size_t trained = 0;
      for (const auto& up : report.updates) {
        if (up.skipped) continue;
        rounds_csv << report.round << "," << up.client_id << "," << fixed(up.train_loss) << ","
                   << fixed(up.frac_p1) << "," << up.sample_count << "\n";
        if (cfg.mask_dump) {
          for (std::size_t g = 0; g < layers.size(); ++g) {
            masks_csv << report.round << "," << up.client_id << "," << layers.groups()[g].name << ","
                      << fixed(up.group_retention[g]) << "\n";
          }
        }
        loss_sum += up.train_loss;
        ++trained;
      }
      for (const auto& w : report.warnings) err << "warning: round " << report.round << ": " << w << "\n";
      const bool due = (cfg.checkpoint_interval > 0 && report.round % cfg.checkpoint_interval == 0) ||
                       report.round == total_rounds;
      if (due) {
        model::save_checkpoint(server.global, ckpt_dir / checkpoint_name("global", report.round));
        for (const auto& c : clients) {
          model::save_checkpoint(
              c.retained, ckpt_dir / checkpoint_name("client" + std::to_string(c.id), report.round));
        }
      }
      out << "round " << report.round << "/" << total_rounds << " clients " << trained
          << " mean_train_loss " << fixed(trained ? loss_sum / static_cast<double>(trained) : 0.0)
          << "\n";
    };

    const auto result = fed::run_training(ds, cfg.train, hooks);
    for (const auto& row : result.metrics) metrics_csv << metric_row(row) << "\n";
    if (total_rounds == 0) {
      model::save_checkpoint(result.server.global, ckpt_dir / checkpoint_name("global", 0));
    }
    if (!result.metrics.empty()) {
      const std::size_t last = result.metrics.back().round;
      std::vector<eval::MetricReport> personal;
      for (const auto& row : result.metrics) {
        if (row.round != last) continue;
        if (row.scope == "global") {
          out << "final global HR@10 " << fixed(row.report.hr_at(10)) << " NDCG@10 "
              << fixed(row.report.ndcg_at(10)) << "\n";
        } else {
          personal.push_back(row.report);
        }
      }
      if (!personal.empty()) {
        const auto p = eval::combine(personal);
        out << "final personalized HR@10 " << fixed(p.hr_at(10)) << " NDCG@10 "
            << fixed(p.ndcg_at(10)) << "\n";
      }
    }
    out << "outputs " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    precheck(cfg);
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs checkpoint = <file>");
    require_input(cfg.checkpoint, "checkpoint");
    const auto ds = load_dataset(cfg, err);
    const auto split = data::leave_one_out_split(ds);
    model::ModelConfig mc = cfg.train.model;
    mc.num_items = ds.num_items();
    const model::RecModel model(mc);
    const auto params = model::load_checkpoint(cfg.checkpoint);
    if (!(params.layers() == model.layers())) {
      throw ContractError("checkpoint " + cfg.checkpoint +
                          " does not match the configured model and dataset");
    }
    std::vector<UserId> users(ds.num_users());
    for (std::size_t u = 0; u < users.size(); ++u) users[u] = static_cast<UserId>(u + 1);
    const auto mode = cfg.train.eval_mode;
    const fed::MetricRow model_row{0, "checkpoint", mode,
                                   eval::evaluate(model, params, split, users, mode)};
    const auto pop = eval::popularity_scores(split);
    const fed::MetricRow pop_row{
        0, "popularity", mode,
        eval::evaluate_with([&](std::span<const ItemId>) { return pop; }, split, users, mode)};

    const fs::path dir = prepare_output_dir(cfg);
    auto csv = open_output(dir / "eval.csv");
    for (std::ostream* s : {static_cast<std::ostream*>(&csv), &out}) {
      *s << kMetricHeader << "\n" << metric_row(model_row) << "\n" << metric_row(pop_row) << "\n";
    }
    return kExitOk;
  });
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err,
                  std::optional<diff::GradientFault> fault) {
  return guarded(err, [&] {
    cfg.validate();
    const auto mc = gradcheck_model_config(cfg.train.model.num_blocks);
    const auto report = run_gradcheck(mc, cfg.train.loss, cfg.train.seed, fault);
    std::vector<std::string> offenders;
    for (const auto& g : report.groups) {
      char line[160];
      const bool ok = g.max_rel_error < report.tolerance;
      std::snprintf(line, sizeof line, "%-20s elements %6zu max_rel_err %.3e %s", g.group.c_str(),
                    g.elements, g.max_rel_error, ok ? "ok" : "FAIL");
      out << line << "\n";
      if (!ok) offenders.push_back(g.group);
    }
    if (!offenders.empty()) {
      err << "gradcheck failed for:";
      for (const auto& o : offenders) err << " " << o;
      err << "\n";
      return kExitFailure;
    }
    out << "gradcheck passed (tolerance " << report.tolerance << ")\n";
    return kExitOk;
  });
}

}  // namespace pfsr::cli
