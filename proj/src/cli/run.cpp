#include <map>

#include "CLI11.hpp"
#include "pfsr/cli/commands.hpp"
#include "pfsr/errors.hpp"

namespace pfsr::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personalized federated sequential recommendation simulator", "pfsr"};
  app.require_subcommand(1);

  std::string config_file;
  std::map<std::string, std::string> overrides;
  const std::map<std::string, std::string> summaries = {
      {"prep", "load or generate a corpus and write its cache"},
      {"train", "run federated training and write logs, metrics and checkpoints"},
      {"eval", "score a checkpoint with leave-one-out HR@k / NDCG@k"},
      {"gradcheck", "compare analytic gradients with finite differences"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, summary] : summaries) {
    CLI::App* sub = app.add_subcommand(name, summary);
    sub->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& field : config_fields()) {
      sub->add_option("--" + field.key, overrides[field.key], field.help);
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig cfg;
  try {
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& field : config_fields()) {
      for (CLI::App* sub : subs) {
        if (sub->parsed() && sub->count("--" + field.key) > 0) {
          apply_setting(cfg, field.key, overrides[field.key]);
        }
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "prep") return cmd_prep(cfg, out, err);
  if (command == "train") return cmd_train(cfg, out, err);
  if (command == "eval") return cmd_eval(cfg, out, err);
  return cmd_gradcheck(cfg, out, err);
}

}  // namespace pfsr::cli
