#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latentshield/io.hpp"

namespace latentshield::cli {

using latentshield::json;

struct StageRecord {
  std::string name;                   // "gen-data", "train", "protect:advdm", ...
  std::string config_hash;            // hex key: section json + upstream artifact hashes
  std::string artifacts_hash;         // hex content hash of the stage directory
  std::vector<std::string> outputs;   // paths relative to the run directory
  double wall_seconds = 0.0;
  std::string status;                 // "complete" | "cached" | "failed"
  std::string code_version;
};

/// Per-run manifest, one JSON file at <run_dir>/manifest.json, rewritten
/// atomically at every stage boundary.
class RunManifest {
 public:
  static RunManifest load_or_create(const std::filesystem::path& run_dir);

  const StageRecord* find(const std::string& stage) const;
  /// True when `stage` completed under the same key and its artifacts still
  /// hash to what was recorded.
  bool is_cached(const std::string& stage, const std::string& config_hash) const;
  /// Upserts the record and writes the manifest.
  void record(StageRecord rec);
  /// Marks an already-valid stage as reused and writes the manifest.
  void note_cached(const std::string& stage);

  const std::filesystem::path& run_dir() const { return run_dir_; }
  json to_json() const;

 private:
  std::filesystem::path run_dir_;
  std::vector<StageRecord> stages_;
  void write() const;
};

/// Cache key for a stage: the normalized config section plus the artifact
/// hashes of everything upstream.
std::string stage_key(const json& section, const std::vector<std::string>& upstream_hashes);

/// Content hash of a directory tree: file names and bytes, in sorted order.
/// Files named timing.csv are skipped, so wall-clock side files never
/// invalidate downstream caches.
std::string hash_tree(const std::filesystem::path& dir);

}  // namespace latentshield::cli
