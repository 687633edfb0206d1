#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latentshield/attacks.hpp"
#include "latentshield/dataset.hpp"
#include "latentshield/diffusion.hpp"
#include "latentshield/models.hpp"
#include "latentshield/threats.hpp"

#include "cli_errors.hpp"

namespace latentshield::cli {

/// A fully validated experiment description. Every section is normalized at
/// load time (defaults and derived seeds materialized), so the json returned
/// by section() both drives execution and keys stage caching: two configs
/// that resolve to the same behavior share cache entries.
class ExperimentConfig {
 public:
  static ExperimentConfig load(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed_override = std::nullopt);
  static ExperimentConfig from_json(const json& raw,
                                    std::optional<std::uint64_t> seed_override = std::nullopt);

  std::uint64_t seed() const { return seed_; }
  /// out_dir from the config; when relative, resolved under $LATENTSHIELD_CACHE
  /// (if set), else under the current directory.
  const std::filesystem::path& out_dir() const { return out_dir_; }

  /// Normalized section ("dataset", "train", "protect", "edit", "diagnose",
  /// "evaluate"); keys sorted, all defaults present.
  const json& section(const std::string& name) const;

  // Typed views over the normalized sections.
  DatasetSpec dataset_spec() const;

  struct TrainSettings {
    NoiseSchedule schedule;
    AutoencoderArch ae_arch;   // image size/channels come from the dataset
    DenoiserArch dn_arch;
    AeTrainConfig ae;
    DmTrainConfig dm;
    std::uint64_t init_seed = 0;
    bool transfer_bundle = true;  // second, independently seeded bundle
    bool pixel_dm = true;         // pixel-space model for the no-encoder probe
    DenoiserArch pixel_arch;
    DmTrainConfig pixel;
  };
  TrainSettings train_settings() const;

  int protect_images() const;
  std::vector<AttackConfig> attacks() const;

  int edit_images() const;
  std::vector<EditRequest> edits() const;

  const json& diagnose() const { return section("diagnose"); }

  std::vector<std::string> metric_set() const;
  int evaluate_min_samples() const;

 private:
  std::uint64_t seed_ = 0;
  std::filesystem::path out_dir_;
  json sections_;  // name -> normalized section
};

}  // namespace latentshield::cli
