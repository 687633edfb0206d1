#include "cli_manifest.hpp"

#include <algorithm>

#ifndef LATENTSHIELD_VERSION
#define LATENTSHIELD_VERSION "0.0.0"
#endif

namespace latentshield::cli {

RunManifest RunManifest::load_or_create(const std::filesystem::path& run_dir) {
  RunManifest m;
  m.run_dir_ = run_dir;
  const auto path = run_dir / "manifest.json";
  if (!std::filesystem::exists(path)) return m;
  const json j = read_json_file(path);
  for (const json& s : j.value("stages", json::array())) {
    StageRecord r;
    r.name = s.value("name", "");
    r.config_hash = s.value("config_hash", "");
    r.artifacts_hash = s.value("artifacts_hash", "");
    for (const auto& p : s.value("outputs", json::array())) {
      r.outputs.push_back(p.get<std::string>());
    }
    r.wall_seconds = s.value("wall_seconds", 0.0);
    r.status = s.value("status", "");
    r.code_version = s.value("code_version", "");
    m.stages_.push_back(std::move(r));
  }
  return m;
}

const StageRecord* RunManifest::find(const std::string& stage) const {
  for (const auto& r : stages_) {
    if (r.name == stage) return &r;
  }
  return nullptr;
}

bool RunManifest::is_cached(const std::string& stage, const std::string& config_hash) const {
  const StageRecord* r = find(stage);
  if (!r || r->config_hash != config_hash) return false;
  if (r->status != "complete" && r->status != "cached") return false;
  for (const auto& rel : r->outputs) {
    if (!std::filesystem::exists(run_dir_ / rel)) return false;
  }
  if (!r->outputs.empty()) {
    // Artifacts may have been edited behind our back; recheck their bytes.
    const auto stage_dir = (run_dir_ / r->outputs.front()).parent_path();
    if (hash_tree(stage_dir) != r->artifacts_hash) return false;
  }
  return true;
}

void RunManifest::record(StageRecord rec) {
  rec.code_version = LATENTSHIELD_VERSION;
  auto it = std::find_if(stages_.begin(), stages_.end(),
                         [&](const StageRecord& r) { return r.name == rec.name; });
  if (it == stages_.end()) {
    stages_.push_back(std::move(rec));
  } else {
    *it = std::move(rec);
  }
  write();
}

void RunManifest::note_cached(const std::string& stage) {
  for (auto& r : stages_) {
    if (r.name == stage) {
      r.status = "cached";
      write();
      return;
    }
  }
}

json RunManifest::to_json() const {
  json stages = json::array();
  for (const auto& r : stages_) {
    stages.push_back({{"name", r.name},
                      {"config_hash", r.config_hash},
                      {"artifacts_hash", r.artifacts_hash},
                      {"outputs", r.outputs},
                      {"wall_seconds", r.wall_seconds},
                      {"status", r.status},
                      {"code_version", r.code_version}});
  }
  return json{{"stages", stages}};
}

void RunManifest::write() const {
  std::filesystem::create_directories(run_dir_);
  write_json_atomic(run_dir_ / "manifest.json", to_json());
}

std::string stage_key(const json& section, const std::vector<std::string>& upstream_hashes) {
  std::string blob = section.dump();
  for (const auto& h : upstream_hashes) {
    blob += '|';
    blob += h;
  }
  return hex_u64(fnv1a64(blob));
}

std::string hash_tree(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(dir)) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "timing.csv") {
        files.push_back(e.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  std::string blob;
  for (const auto& f : files) {
    blob += std::filesystem::relative(f, dir).generic_string();
    blob += '=';
    blob += hex_u64(fnv1a64_file(f));
    blob += ';';
  }
  return hex_u64(fnv1a64(blob));
}

}  // namespace latentshield::cli
