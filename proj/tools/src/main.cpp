#include <CLI11.hpp>

#include "cli_commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"latentshield: adversarial protection experiments on a toy latent "
               "diffusion model"};
  app.set_version_flag("--version", LATENTSHIELD_VERSION);
  app.require_subcommand(1);

  latentshield::cli::CliOptions opt;
  std::string seed_text;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Synthesize the image dataset"},
      {"train", "Train the autoencoder and denoiser bundles"},
      {"protect", "Run the configured protection attacks"},
      {"edit", "Apply the editing pipelines to clean and protected images"},
      {"diagnose", "Run bottleneck and robustness probes"},
      {"evaluate", "Compute the metrics report"},
      {"report", "Aggregate evaluation and diagnostics into a run report"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_flag("--force", opt.force, "Rebuild even when cached outputs are valid");
    sub->add_option("--jobs", opt.jobs, "Worker threads for per-image stages")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed_text, "Override the config's global seed");
  }

  CLI11_PARSE(app, argc, argv);

  if (!seed_text.empty()) {
    try {
      opt.seed = std::stoull(seed_text);
    } catch (const std::exception&) {
      std::cerr << R"({"error":{"kind":"config","message":"--seed must be a non-negative integer"}})"
                << "\n";
      std::cerr << "error (config): --seed must be a non-negative integer\n";
      return latentshield::cli::kConfig;
    }
  }
  return latentshield::cli::run_command(app.get_subcommands().front()->get_name(), opt);
}
