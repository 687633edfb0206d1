#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cli_config.hpp"
#include "cli_manifest.hpp"

namespace latentshield::cli {

struct CliOptions {
  std::filesystem::path config_path;
  bool force = false;
  int jobs = 1;
  std::optional<std::uint64_t> seed;  // overrides the config's global seed
};

// Stage commands. Each validates its upstream artifacts, honors the cache
// (unless --force), runs, and records itself in the run manifest. They throw
// on failure; run_command translates exceptions to exit codes + error JSON.
void cmd_gen_data(const ExperimentConfig& cfg, const CliOptions& opt);
void cmd_train(const ExperimentConfig& cfg, const CliOptions& opt);
void cmd_protect(const ExperimentConfig& cfg, const CliOptions& opt);
void cmd_edit(const ExperimentConfig& cfg, const CliOptions& opt);
void cmd_diagnose(const ExperimentConfig& cfg, const CliOptions& opt);
void cmd_evaluate(const ExperimentConfig& cfg, const CliOptions& opt);
void cmd_report(const ExperimentConfig& cfg, const CliOptions& opt);

/// Loads the config, dispatches to the named command, and maps exceptions to
/// {exit code, one-line error JSON on stderr, human-readable second line}.
int run_command(const std::string& name, const CliOptions& opt);

/// Index-parallel map with a worker cap; exceptions propagate to the caller.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn);

}  // namespace latentshield::cli
