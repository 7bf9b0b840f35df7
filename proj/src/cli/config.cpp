#include "pfsr/cli/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pfsr/errors.hpp"

namespace pfsr::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true|false, got '" + v + "'");
}

std::string show(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string show(std::uint64_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }

// Field bound to a member reached through `ref`.
template <typename Ref>
ConfigField size_field(std::string key, std::string help, Ref ref) {
  return {key, std::move(help),
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_size(key, v); },
          [ref](const RunConfig& c) { return show(static_cast<std::uint64_t>(ref(c))); }};
}

template <typename Ref>
ConfigField double_field(std::string key, std::string help, Ref ref) {
  return {key, std::move(help),
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_double(key, v); },
          [ref](const RunConfig& c) { return show(ref(c)); }};
}

template <typename Ref>
ConfigField string_field(std::string key, std::string help, Ref ref) {
  return {key, std::move(help), [ref](RunConfig& c, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return ref(c); }};
}

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f;
  // Data.
  f.push_back(string_field("data_path", "interaction TSV (user, item, timestamp)",
                           [](auto& c) -> auto& { return c.data_path; }));
  f.push_back(string_field("cache_path", "dataset cache written by prep",
                           [](auto& c) -> auto& { return c.cache_path; }));
  f.push_back(size_field("k_core", "k-core threshold for TSV input",
                         [](auto& c) -> auto& { return c.k_core; }));
  f.push_back(size_field("synthetic_users", "synthetic corpus: users",
                         [](auto& c) -> auto& { return c.synthetic.num_users; }));
  f.push_back(size_field("synthetic_items", "synthetic corpus: items",
                         [](auto& c) -> auto& { return c.synthetic.num_items; }));
  f.push_back(size_field("synthetic_clients", "synthetic corpus: devices with their own chain",
                         [](auto& c) -> auto& { return c.synthetic.num_clients; }));
  f.push_back(size_field("synthetic_min_len", "synthetic corpus: shortest sequence",
                         [](auto& c) -> auto& { return c.synthetic.min_len; }));
  f.push_back(size_field("synthetic_max_len", "synthetic corpus: longest sequence",
                         [](auto& c) -> auto& { return c.synthetic.max_len; }));
  f.push_back(size_field("synthetic_branching", "synthetic corpus: successors per item",
                         [](auto& c) -> auto& { return c.synthetic.branching; }));
  f.push_back(double_field("synthetic_restart", "synthetic corpus: random jump probability",
                           [](auto& c) -> auto& { return c.synthetic.restart; }));
  f.push_back(double_field("synthetic_shared", "synthetic corpus: weight of the common chain",
                           [](auto& c) -> auto& { return c.synthetic.shared; }));
  f.push_back({"synthetic_seed", "synthetic corpus: generator seed",
               [](RunConfig& c, const std::string& v) { c.synthetic.seed = parse_u64("synthetic_seed", v); },
               [](const RunConfig& c) { return show(c.synthetic.seed); }});
  // Model.
  f.push_back(size_field("max_seq_len", "most recent items kept per sequence",
                         [](auto& c) -> auto& { return c.train.model.max_seq_len; }));
  f.push_back(size_field("embed_dim", "embedding dimension d",
                         [](auto& c) -> auto& { return c.train.model.embed_dim; }));
  f.push_back(size_field("state_size", "scan state size S",
                         [](auto& c) -> auto& { return c.train.model.state_size; }));
  f.push_back(size_field("conv_kernel", "causal convolution width K",
                         [](auto& c) -> auto& { return c.train.model.conv_kernel; }));
  f.push_back(size_field("expansion", "inner expansion factor E",
                         [](auto& c) -> auto& { return c.train.model.expansion; }));
  f.push_back(size_field("num_blocks", "stacked blocks",
                         [](auto& c) -> auto& { return c.train.model.num_blocks; }));
  f.push_back(double_field("dropout", "embedding dropout rate",
                           [](auto& c) -> auto& { return c.train.model.dropout; }));
  // Personalization.
  f.push_back(double_field("lambda", "Fisher threshold for keeping local parameters",
                           [](auto& c) -> auto& { return c.train.vrm.lambda; }));
  f.push_back(size_field("fisher_batches", "mini-batches used for the Fisher estimate",
                         [](auto& c) -> auto& { return c.train.vrm.fisher_batches; }));
  f.push_back(double_field("gamma1", "anchor weight toward previous local parameters",
                           [](auto& c) -> auto& { return c.train.loss.gamma1; }));
  f.push_back(double_field("gamma2", "anchor weight toward global parameters",
                           [](auto& c) -> auto& { return c.train.loss.gamma2; }));
  f.push_back({"loss_reduction", "sum|mean of per-target cross-entropy in a batch",
               [](RunConfig& c, const std::string& v) { c.train.loss.reduction = losses::parse_reduction(v); },
               [](const RunConfig& c) { return losses::to_string(c.train.loss.reduction); }});
  // Federation.
  f.push_back(size_field("num_clients", "simulated devices",
                         [](auto& c) -> auto& { return c.train.fed.num_clients; }));
  f.push_back({"partition", "uniform|natural assignment of users to devices",
               [](RunConfig& c, const std::string& v) { c.train.partition = data::parse_partition_strategy(v); },
               [](const RunConfig& c) { return data::to_string(c.train.partition); }});
  f.push_back(size_field("rounds", "global rounds",
                         [](auto& c) -> auto& { return c.train.fed.rounds; }));
  f.push_back(size_field("local_epochs", "local epochs per round",
                         [](auto& c) -> auto& { return c.train.fed.local_epochs; }));
  f.push_back(double_field("client_fraction", "fraction of devices sampled per round",
                           [](auto& c) -> auto& { return c.train.fed.client_fraction; }));
  f.push_back(double_field("lr", "learning rate",
                           [](auto& c) -> auto& { return c.train.fed.lr; }));
  f.push_back(size_field("batch_size", "targets per mini-batch",
                         [](auto& c) -> auto& { return c.train.fed.batch_size; }));
  f.push_back({"optimizer", "sgd|adam",
               [](RunConfig& c, const std::string& v) { c.train.fed.optimizer = fed::parse_optimizer(v); },
               [](const RunConfig& c) { return fed::to_string(c.train.fed.optimizer); }});
  f.push_back(size_field("threads", "worker threads for devices within a round",
                         [](auto& c) -> auto& { return c.train.fed.threads; }));
  f.push_back({"seed", "run seed",
               [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64("seed", v); },
               [](const RunConfig& c) { return show(c.train.seed); }});
  // Evaluation and output.
  f.push_back(size_field("eval_interval", "evaluate every n rounds (0 = never)",
                         [](auto& c) -> auto& { return c.train.eval_interval; }));
  f.push_back({"eval_mode", "valid|test",
               [](RunConfig& c, const std::string& v) { c.train.eval_mode = eval::parse_eval_mode(v); },
               [](const RunConfig& c) { return eval::to_string(c.train.eval_mode); }});
  f.push_back(string_field("output_dir", "directory for every file a command writes",
                           [](auto& c) -> auto& { return c.output_dir; }));
  f.push_back(size_field("checkpoint_interval", "checkpoint every n rounds (0 = final only)",
                         [](auto& c) -> auto& { return c.checkpoint_interval; }));
  f.push_back({"mask_dump", "write per-group mask retention",
               [](RunConfig& c, const std::string& v) { c.mask_dump = parse_bool("mask_dump", v); },
               [](const RunConfig& c) { return show(c.mask_dump); }});
  f.push_back(string_field("checkpoint", "checkpoint scored by eval",
                           [](auto& c) -> auto& { return c.checkpoint; }));
  return f;
}

}  // namespace

RunConfig::RunConfig() = default;

void RunConfig::validate() const {
  train.validate();
  // |V| is only known once the data is loaded.
  auto model = train.model;
  model.num_items = 1;
  model.validate();
  if (data_path.empty() && cache_path.empty()) synthetic.validate();
  if (k_core < 1) throw ConfigError("k_core must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  if (const char* root = std::getenv("PFSR_OUTPUT_ROOT"); root && *root && dir.is_relative()) {
    return std::filesystem::path(root) / dir;
  }
  return dir;
}

}  // namespace pfsr::cli
