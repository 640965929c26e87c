#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "backlink/backlink.h"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::size_t> staleness;
  std::optional<std::string> precision;
};

void add_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--seeds", o.seeds, "number of seeds (train)");
  cmd->add_option("--out", o.out, "output directory (default $BACKLINK_OUT_DIR/<name> or runs/<name>)");
  cmd->add_option("--mode", o.mode, "execution mode")->check(CLI::IsMember({"sequential", "pipeline"}));
  cmd->add_option("--staleness", o.staleness, "gradient staleness of the pipeline")->check(CLI::Range(0, 1));
  cmd->add_option("--precision", o.precision, "floating point width")->check(CLI::IsMember({"wide", "standard"}));
}

int fail(bl_status s) {
  std::cerr << "error: " << bl_last_error() << "\n";
  return static_cast<int>(s);
}

int run(const std::string& command, const Overrides& o) {
  bl_experiment* exp = nullptr;
  if (bl_status s = bl_experiment_from_file(o.config.c_str(), &exp); s != BL_OK) return fail(s);
  bl_status s = BL_OK;
  if (o.seed) s = bl_set_seed(exp, *o.seed);
  if (s == BL_OK && o.seeds) s = bl_set_seeds(exp, *o.seeds);
  if (s == BL_OK && o.out) s = bl_set_out_dir(exp, o.out->c_str());
  if (s == BL_OK && o.mode) s = bl_set_mode(exp, o.mode->c_str());
  if (s == BL_OK && o.staleness) s = bl_set_staleness(exp, *o.staleness);
  if (s == BL_OK && o.precision) s = bl_set_precision(exp, o.precision->c_str());
  if (s == BL_OK) {
    if (command == "train") s = bl_run_train(exp);
    else if (command == "gradcheck") s = bl_run_gradcheck(exp);
    else if (command == "costmodel") s = bl_run_costmodel(exp);
    else s = bl_run_pipesim(exp);
    std::string warnings = bl_warnings(exp);
    if (!warnings.empty()) std::cerr << "warning: " << warnings;
    if (s == BL_OK || s == BL_ERR_VERIFICATION) {
      std::cout << bl_summary(exp) << "\n";
      std::cerr << command << ": outputs in " << bl_out_dir(exp) << "\n";
    }
  }
  const int code = s == BL_OK ? 0 : fail(s);
  bl_experiment_destroy(exp);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BackLink local-learning experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bl_version());
  Overrides o;
  for (const char* name : {"train", "gradcheck", "costmodel", "pipesim"}) {
    const char* help = std::string(name) == "train"       ? "train and write per-epoch metrics"
                       : std::string(name) == "gradcheck" ? "finite-difference and limit-case gradient checks"
                       : std::string(name) == "costmodel" ? "memory and runtime model sweep over K and l"
                                                          : "pipelined run with schedule trace and speedup";
    add_flags(app.add_subcommand(name, help), o);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  return run(app.get_subcommands().front()->get_name(), o);
}
