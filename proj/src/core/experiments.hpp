#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace backlink {

struct CommandResult {
  int status = 0;  // 0 ok, 2 verification failure
  std::vector<std::string> files;
  nlohmann::json summary;
  std::vector<std::string> warnings;
};

// config.out_dir, else $BACKLINK_OUT_DIR/<name>, else runs/<name>.
std::string resolve_out_dir(const ExperimentConfig& c);

// Trains `seeds` runs (seed, seed + 1, ...) and writes train.jsonl / train.csv.
CommandResult cmd_train(ExperimentConfig c);
// Finite-difference and limit-case oracles on a tiny network, wide precision.
CommandResult cmd_gradcheck(ExperimentConfig c);
// Memory and runtime model sweep over K and l.
CommandResult cmd_costmodel(ExperimentConfig c);
// Pipeline run with its schedule trace, modeled speedup and the lock-step check.
CommandResult cmd_pipesim(ExperimentConfig c);

}  // namespace backlink
