#pragma once

#include <optional>
#include <ostream>

#include "pfsr/cli/config.hpp"
#include "pfsr/diff/graph.hpp"

namespace pfsr::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

// Corpus selected by the config: cache, then TSV, then synthetic.
data::InteractionDataset load_dataset(const RunConfig& cfg, std::ostream& err);

// Commands. Each returns an exit code; configuration problems give
// kExitUsage before anything is written.
int cmd_prep(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err,
                  std::optional<diff::GradientFault> fault = std::nullopt);

// `pfsr <prep|train|eval|gradcheck> [--config FILE] [--key value ...]`
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pfsr::cli
