#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pfsr/data/synthetic.hpp"
#include "pfsr/fed/federation.hpp"

namespace pfsr::cli {

struct RunConfig {
  fed::TrainConfig train;
  data::SyntheticConfig synthetic;
  std::string data_path;   // interaction TSV; empty selects the synthetic corpus
  std::string cache_path;  // prepared cache; wins over data_path
  std::size_t k_core = 5;
  std::string output_dir = "pfsr_out";
  std::size_t checkpoint_interval = 0;  // 0 writes checkpoints for the final round only
  bool mask_dump = false;
  std::string checkpoint;  // parameters scored by `eval`

  RunConfig();
  void validate() const;
};

// One config key. `get` renders the current value so that feeding it back to
// `set` reproduces it exactly.
struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigField>& config_fields();

// Throws ConfigError for unknown keys or unparseable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat `key = value` lines; `#` starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Every key in a fixed order, one `key = value` per line.
std::string render_config(const RunConfig& cfg);

// output_dir, placed under $PFSR_OUTPUT_ROOT when that is set and the
// configured directory is relative.
std::filesystem::path resolve_output_dir(const RunConfig& cfg);

}  // namespace pfsr::cli
