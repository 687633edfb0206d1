#include "cli_config.hpp"

#include <cstdlib>
#include <set>

#include "latentshield/io.hpp"

namespace latentshield::cli {

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

json resolve_dataset(const json& in, std::uint64_t global_seed) {
  check_keys(in, {"count", "image_size", "channels", "seed", "style"}, "dataset");
  DatasetSpec d;
  json out;
  out["count"] = in.value("count", d.count);
  out["image_size"] = in.value("image_size", d.image_size);
  out["channels"] = in.value("channels", d.channels);
  out["seed"] = in.value("seed", Rng::derive(global_seed, "dataset"));
  out["style"] = in.value("style", d.style);
  if (out["count"].get<int>() < 0) throw ConfigError("dataset.count must be >= 0");
  const int size = out["image_size"].get<int>();
  if (size <= 0 || size % AutoencoderArch::kDownsample != 0) {
    throw ConfigError("dataset.image_size must be a positive multiple of " +
                      std::to_string(AutoencoderArch::kDownsample));
  }
  const int ch = out["channels"].get<int>();
  if (ch != 1 && ch != 3) throw ConfigError("dataset.channels must be 1 or 3");
  const std::string style = out["style"].get<std::string>();
  if (style != "base" && style != "alt") throw ConfigError("dataset.style must be base or alt");
  return out;
}

json resolve_train(const json& in, std::uint64_t global_seed) {
  check_keys(in,
             {"schedule", "arch", "autoencoder", "denoiser", "init_seed", "transfer_bundle",
              "pixel_dm", "pixel"},
             "train");

  json sched = in.value("schedule", json::object());
  check_keys(sched, {"kind", "timesteps", "beta_start", "beta_end"}, "train.schedule");
  json out_sched;
  out_sched["kind"] = sched.value("kind", "linear");
  out_sched["timesteps"] = sched.value("timesteps", 1000);
  out_sched["beta_start"] = sched.value("beta_start", 1e-4);
  out_sched["beta_end"] = sched.value("beta_end", 0.02);
  schedule_kind_from_string(out_sched["kind"].get<std::string>());  // validates

  json arch = in.value("arch", json::object());
  check_keys(arch,
             {"base_channels", "latent_channels", "denoiser_base", "time_dim", "time_hidden",
              "cond_dim"},
             "train.arch");
  json out_arch;
  out_arch["base_channels"] = arch.value("base_channels", 16);
  out_arch["latent_channels"] = arch.value("latent_channels", 4);
  out_arch["denoiser_base"] = arch.value("denoiser_base", 32);
  out_arch["time_dim"] = arch.value("time_dim", 32);
  out_arch["time_hidden"] = arch.value("time_hidden", 64);
  out_arch["cond_dim"] = arch.value("cond_dim", 16);
  for (const auto& [key, v] : out_arch.items()) {
    if (v.get<int>() <= 0) throw ConfigError("train.arch." + key + " must be positive");
  }

  AeTrainConfig ae;
  json jae = in.value("autoencoder", json::object());
  check_keys(jae, {"epochs", "batch_size", "lr", "target_rmse", "val_fraction", "min_images",
                   "seed"},
             "train.autoencoder");
  json out_ae;
  out_ae["epochs"] = jae.value("epochs", ae.epochs);
  out_ae["batch_size"] = jae.value("batch_size", ae.batch_size);
  out_ae["lr"] = jae.value("lr", ae.lr);
  out_ae["target_rmse"] = jae.value("target_rmse", ae.target_rmse);
  out_ae["val_fraction"] = jae.value("val_fraction", ae.val_fraction);
  out_ae["min_images"] = jae.value("min_images", ae.min_images);
  out_ae["seed"] = jae.value("seed", Rng::derive(global_seed, "train/ae"));

  DmTrainConfig dm;
  json jdm = in.value("denoiser", json::object());
  check_keys(jdm, {"epochs", "batch_size", "lr", "val_fraction", "cond_dropout", "seed"},
             "train.denoiser");
  json out_dm;
  out_dm["epochs"] = jdm.value("epochs", dm.epochs);
  out_dm["batch_size"] = jdm.value("batch_size", dm.batch_size);
  out_dm["lr"] = jdm.value("lr", dm.lr);
  out_dm["val_fraction"] = jdm.value("val_fraction", dm.val_fraction);
  out_dm["cond_dropout"] = jdm.value("cond_dropout", dm.cond_dropout);
  out_dm["seed"] = jdm.value("seed", Rng::derive(global_seed, "train/dm"));

  json jpix = in.value("pixel", json::object());
  check_keys(jpix,
             {"base_channels", "time_dim", "time_hidden", "epochs", "batch_size", "lr",
              "val_fraction", "seed"},
             "train.pixel");
  json out_pix;
  out_pix["base_channels"] = jpix.value("base_channels", 16);
  out_pix["time_dim"] = jpix.value("time_dim", 16);
  out_pix["time_hidden"] = jpix.value("time_hidden", 32);
  out_pix["epochs"] = jpix.value("epochs", 30);
  out_pix["batch_size"] = jpix.value("batch_size", 32);
  out_pix["lr"] = jpix.value("lr", 1.5e-3);
  out_pix["val_fraction"] = jpix.value("val_fraction", 0.1);
  out_pix["seed"] = jpix.value("seed", Rng::derive(global_seed, "train/pixel"));

  json out;
  out["schedule"] = out_sched;
  out["arch"] = out_arch;
  out["autoencoder"] = out_ae;
  out["denoiser"] = out_dm;
  out["init_seed"] = in.value("init_seed", Rng::derive(global_seed, "train/init"));
  out["transfer_bundle"] = in.value("transfer_bundle", true);
  out["pixel_dm"] = in.value("pixel_dm", true);
  out["pixel"] = out_pix;
  return out;
}

json resolve_protect(const json& in, std::uint64_t global_seed) {
  check_keys(in, {"images", "seed", "attacks"}, "protect");
  json out;
  out["images"] = in.value("images", 64);
  if (out["images"].get<int>() < 0) throw ConfigError("protect.images must be >= 0");
  const std::uint64_t section_seed = in.value("seed", Rng::derive(global_seed, "protect"));
  out["seed"] = section_seed;

  json attacks = json::array();
  json list = in.value("attacks", json::array());
  if (!list.is_array()) throw ConfigError("protect.attacks must be an array");
  if (list.empty()) {
    for (const std::string& m : method_names()) list.push_back(json{{"method", m}});
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < list.size(); ++i) {
    json a = list[i];
    if (!a.contains("seed")) {
      a["seed"] = Rng::derive(section_seed, "attack/" + std::to_string(i));
    }
    AttackConfig cfg;
    try {
      cfg = AttackConfig::from_json(a);
    } catch (const std::exception& e) {
      throw ConfigError("protect.attacks[" + std::to_string(i) + "]: " + e.what());
    }
    if (!seen.insert(cfg.method).second) {
      throw ConfigError("protect.attacks repeats method " + cfg.method);
    }
    attacks.push_back(cfg.to_json());
  }
  out["attacks"] = attacks;
  return out;
}

json resolve_edit(const json& in, std::uint64_t global_seed) {
  check_keys(in, {"images", "seed", "requests"}, "edit");
  json out;
  out["images"] = in.value("images", 64);
  if (out["images"].get<int>() < 0) throw ConfigError("edit.images must be >= 0");
  const std::uint64_t section_seed = in.value("seed", Rng::derive(global_seed, "edit"));
  out["seed"] = section_seed;

  json list = in.value("requests", json::array());
  if (!list.is_array()) throw ConfigError("edit.requests must be an array");
  if (list.empty()) {
    list.push_back(json{{"kind", "sdedit"}, {"strength", 0.2}});
    list.push_back(json{{"kind", "sdedit"}, {"strength", 0.3}});
  }
  json requests = json::array();
  std::set<double> sdedit_strengths;
  for (std::size_t i = 0; i < list.size(); ++i) {
    json r = list[i];
    if (!r.contains("seed")) {
      r["seed"] = Rng::derive(section_seed, "request/" + std::to_string(i));
    }
    try {
      const EditRequest req = EditRequest::from_json(r);
      // Metric tables key sdedit outputs by strength, so duplicates would
      // silently overwrite each other downstream.
      if (req.kind == "sdedit" && !sdedit_strengths.insert(req.strength).second) {
        throw ConfigError("duplicate sdedit request at strength " +
                          std::to_string(req.strength));
      }
      requests.push_back(req.to_json());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("edit.requests[" + std::to_string(i) + "]: " + e.what());
    }
  }
  out["requests"] = requests;
  return out;
}

json resolve_diagnose(const json& in, std::uint64_t global_seed) {
  check_keys(in,
             {"images", "seed", "budget_ratio", "roundtrip", "robustness", "loss_curve",
              "transfer", "pixel_probe"},
             "diagnose");
  json out;
  out["images"] = in.value("images", 64);
  if (out["images"].get<int>() < 0) throw ConfigError("diagnose.images must be >= 0");
  out["seed"] = in.value("seed", Rng::derive(global_seed, "diagnose"));

  json br = in.value("budget_ratio", json::object());
  check_keys(br, {"enabled", "bins"}, "diagnose.budget_ratio");
  out["budget_ratio"] = {{"enabled", br.value("enabled", true)}, {"bins", br.value("bins", 16)}};

  json rt = in.value("roundtrip", json::object());
  check_keys(rt, {"enabled", "strength", "steps"}, "diagnose.roundtrip");
  out["roundtrip"] = {{"enabled", rt.value("enabled", true)},
                      {"strength", rt.value("strength", 0.3)},
                      {"steps", rt.value("steps", 50)}};

  json rb = in.value("robustness", json::object());
  check_keys(rb, {"enabled", "budgets", "iters", "strength", "steps"}, "diagnose.robustness");
  out["robustness"] = {{"enabled", rb.value("enabled", true)},
                       {"budgets", rb.value("budgets", json::array({0.0, 16.0 / 255.0,
                                                                    32.0 / 255.0, 0.5}))},
                       {"iters", rb.value("iters", 40)},
                       {"strength", rb.value("strength", 0.3)},
                       {"steps", rb.value("steps", 50)}};

  json lc = in.value("loss_curve", json::object());
  check_keys(lc, {"enabled", "method", "iters", "fixed_timesteps"}, "diagnose.loss_curve");
  out["loss_curve"] = {
      {"enabled", lc.value("enabled", true)},
      {"method", lc.value("method", "advdm")},
      {"iters", lc.value("iters", 100)},
      {"fixed_timesteps",
       lc.value("fixed_timesteps", json::array({62, 187, 312, 437, 562, 687, 812, 937}))}};

  json tr = in.value("transfer", json::object());
  check_keys(tr, {"enabled", "method", "strength", "steps"}, "diagnose.transfer");
  out["transfer"] = {{"enabled", tr.value("enabled", true)},
                     {"method", tr.value("method", "advdm")},
                     {"strength", tr.value("strength", 0.3)},
                     {"steps", tr.value("steps", 50)}};

  json pp = in.value("pixel_probe", json::object());
  check_keys(pp, {"enabled", "delta", "iters", "strength", "steps"}, "diagnose.pixel_probe");
  out["pixel_probe"] = {{"enabled", pp.value("enabled", true)},
                        {"delta", pp.value("delta", 16.0 / 255.0)},
                        {"iters", pp.value("iters", 100)},
                        {"strength", pp.value("strength", 0.3)},
                        {"steps", pp.value("steps", 50)}};
  return out;
}

json resolve_evaluate(const json& in) {
  check_keys(in, {"metrics", "min_samples"}, "evaluate");
  json out;
  out["metrics"] = in.value(
      "metrics", json::array({"ssim", "psnr", "feature_distance", "ia_score",
                              "frechet_feature_distance"}));
  if (!out["metrics"].is_array()) throw ConfigError("evaluate.metrics must be an array");
  static const std::set<std::string> known_metrics = {
      "ssim", "psnr", "feature_distance", "ia_score", "frechet_feature_distance"};
  for (const auto& m : out["metrics"]) {
    if (!m.is_string() || !known_metrics.count(m.get<std::string>())) {
      throw ConfigError("evaluate.metrics contains an unknown metric: " + m.dump());
    }
  }
  out["min_samples"] = in.value("min_samples", 1);
  if (out["min_samples"].get<int>() < 1) throw ConfigError("evaluate.min_samples must be >= 1");
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> seed_override) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifact("config file not found: " + path.string());
  }
  json j;
  try {
    j = read_json_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j, seed_override);
}

ExperimentConfig ExperimentConfig::from_json(const json& raw,
                                             std::optional<std::uint64_t> seed_override) {
  check_keys(raw,
             {"schema_version", "seed", "out_dir", "dataset", "train", "protect", "edit",
              "diagnose", "evaluate"},
             "config");
  ExperimentConfig cfg;
  try {
    const int version = raw.value("schema_version", 1);
    if (version != 1) {
      throw ConfigError("unsupported schema_version " + std::to_string(version) +
                        " (this build reads version 1)");
    }
    cfg.seed_ = seed_override.value_or(raw.value("seed", std::uint64_t{0}));

    if (!raw.contains("out_dir") || !raw["out_dir"].is_string() ||
        raw["out_dir"].get<std::string>().empty()) {
      throw ConfigError("config requires a non-empty out_dir string");
    }
    std::filesystem::path out = raw["out_dir"].get<std::string>();
    if (out.is_relative()) {
      if (const char* cache = std::getenv("LATENTSHIELD_CACHE"); cache && *cache) {
        out = std::filesystem::path(cache) / out;
      }
    }
    cfg.out_dir_ = out;

    cfg.sections_["dataset"] = resolve_dataset(raw.value("dataset", json::object()), cfg.seed_);
    cfg.sections_["train"] = resolve_train(raw.value("train", json::object()), cfg.seed_);
    cfg.sections_["protect"] = resolve_protect(raw.value("protect", json::object()), cfg.seed_);
    cfg.sections_["edit"] = resolve_edit(raw.value("edit", json::object()), cfg.seed_);
    cfg.sections_["diagnose"] =
        resolve_diagnose(raw.value("diagnose", json::object()), cfg.seed_);
    cfg.sections_["evaluate"] = resolve_evaluate(raw.value("evaluate", json::object()));
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

const json& ExperimentConfig::section(const std::string& name) const {
  const auto it = sections_.find(name);
  if (it == sections_.end()) {
    throw std::logic_error("no such config section: " + name);
  }
  return *it;
}

DatasetSpec ExperimentConfig::dataset_spec() const {
  const json& d = section("dataset");
  DatasetSpec spec;
  spec.count = d["count"].get<int>();
  spec.image_size = d["image_size"].get<int>();
  spec.channels = d["channels"].get<int>();
  spec.seed = d["seed"].get<std::uint64_t>();
  spec.style = d["style"].get<std::string>();
  return spec;
}

ExperimentConfig::TrainSettings ExperimentConfig::train_settings() const {
  const json& t = section("train");
  const json& d = section("dataset");
  TrainSettings s;
  const json& sch = t["schedule"];
  s.schedule = make_schedule(sch["timesteps"].get<int>(), sch["beta_start"].get<double>(),
                             sch["beta_end"].get<double>(),
                             schedule_kind_from_string(sch["kind"].get<std::string>()));

  const json& a = t["arch"];
  s.ae_arch.image_channels = d["channels"].get<int>();
  s.ae_arch.image_size = d["image_size"].get<int>();
  s.ae_arch.base_channels = a["base_channels"].get<int>();
  s.ae_arch.latent_channels = a["latent_channels"].get<int>();

  s.dn_arch.data_channels = s.ae_arch.latent_channels;
  s.dn_arch.base_channels = a["denoiser_base"].get<int>();
  s.dn_arch.time_dim = a["time_dim"].get<int>();
  s.dn_arch.time_hidden = a["time_hidden"].get<int>();
  s.dn_arch.cond_dim = a["cond_dim"].get<int>();
  s.dn_arch.num_classes = kNumFamilies;

  const json& ae = t["autoencoder"];
  s.ae.epochs = ae["epochs"].get<int>();
  s.ae.batch_size = ae["batch_size"].get<int>();
  s.ae.lr = ae["lr"].get<double>();
  s.ae.target_rmse = ae["target_rmse"].get<double>();
  s.ae.val_fraction = ae["val_fraction"].get<double>();
  s.ae.min_images = ae["min_images"].get<int>();
  s.ae.seed = ae["seed"].get<std::uint64_t>();

  const json& dm = t["denoiser"];
  s.dm.epochs = dm["epochs"].get<int>();
  s.dm.batch_size = dm["batch_size"].get<int>();
  s.dm.lr = dm["lr"].get<double>();
  s.dm.val_fraction = dm["val_fraction"].get<double>();
  s.dm.cond_dropout = dm["cond_dropout"].get<double>();
  s.dm.seed = dm["seed"].get<std::uint64_t>();

  s.init_seed = t["init_seed"].get<std::uint64_t>();
  s.transfer_bundle = t["transfer_bundle"].get<bool>();
  s.pixel_dm = t["pixel_dm"].get<bool>();

  const json& px = t["pixel"];
  s.pixel_arch.data_channels = d["channels"].get<int>();
  s.pixel_arch.base_channels = px["base_channels"].get<int>();
  s.pixel_arch.time_dim = px["time_dim"].get<int>();
  s.pixel_arch.time_hidden = px["time_hidden"].get<int>();
  s.pixel_arch.cond_dim = 8;
  s.pixel_arch.num_classes = kNumFamilies;
  s.pixel.epochs = px["epochs"].get<int>();
  s.pixel.batch_size = px["batch_size"].get<int>();
  s.pixel.lr = px["lr"].get<double>();
  s.pixel.val_fraction = px["val_fraction"].get<double>();
  s.pixel.cond_dropout = 1.0;  // pixel probe runs unconditional
  s.pixel.seed = px["seed"].get<std::uint64_t>();
  return s;
}

int ExperimentConfig::protect_images() const { return section("protect")["images"].get<int>(); }

std::vector<AttackConfig> ExperimentConfig::attacks() const {
  std::vector<AttackConfig> out;
  for (const json& a : section("protect")["attacks"]) {
    out.push_back(AttackConfig::from_json(a));
  }
  return out;
}

int ExperimentConfig::edit_images() const { return section("edit")["images"].get<int>(); }

std::vector<EditRequest> ExperimentConfig::edits() const {
  std::vector<EditRequest> out;
  for (const json& r : section("edit")["requests"]) {
    out.push_back(EditRequest::from_json(r));
  }
  return out;
}

std::vector<std::string> ExperimentConfig::metric_set() const {
  std::vector<std::string> out;
  for (const auto& m : section("evaluate")["metrics"]) out.push_back(m.get<std::string>());
  return out;
}

int ExperimentConfig::evaluate_min_samples() const {
  return section("evaluate")["min_samples"].get<int>();
}

}  // namespace latentshield::cli
