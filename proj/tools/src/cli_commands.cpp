#include "cli_commands.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <thread>

#include "latentshield/checkpoint.hpp"
#include "latentshield/diagnostics.hpp"
#include "latentshield/metrics.hpp"

namespace latentshield::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string image_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d", i);
  return buf;
}

std::string strength_tag(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", s);
  return buf;
}

std::string request_tag(int idx, const EditRequest& r) {
  std::string tag = std::to_string(idx) + "_" + r.kind;
  if (r.kind == "sdedit") tag += "_s" + strength_tag(r.strength);
  return tag;
}

std::vector<std::string> list_outputs(const std::filesystem::path& run_dir,
                                      const std::filesystem::path& stage_dir) {
  std::vector<std::string> out;
  if (std::filesystem::exists(stage_dir)) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(stage_dir)) {
      if (e.is_regular_file()) {
        out.push_back(std::filesystem::relative(e.path(), run_dir).generic_string());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool dir_non_empty(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir) && !std::filesystem::is_empty(dir);
}

/// Cache gate shared by all stages. Returns false when the stage is already
/// valid (after noting the reuse); true when the caller must (re)build, with
/// the stage directory reset to empty.
bool begin_stage(RunManifest& manifest, const std::string& stage, const std::string& key,
                 const std::filesystem::path& stage_dir, const CliOptions& opt,
                 bool error_if_dirty) {
  if (!opt.force && manifest.is_cached(stage, key)) {
    manifest.note_cached(stage);
    std::cout << "[" << stage << "] cached\n";
    return false;
  }
  if (dir_non_empty(stage_dir)) {
    if (error_if_dirty && !opt.force) {
      throw std::runtime_error(stage + ": output directory " + stage_dir.string() +
                               " exists and is not empty; pass --force to overwrite");
    }
    std::filesystem::remove_all(stage_dir);
  }
  std::filesystem::create_directories(stage_dir);
  return true;
}

void finish_stage(RunManifest& manifest, const std::string& stage, const std::string& key,
                  const std::filesystem::path& stage_dir, double wall_seconds,
                  const std::string& status = "complete") {
  StageRecord rec;
  rec.name = stage;
  rec.config_hash = key;
  rec.artifacts_hash = hash_tree(stage_dir);
  rec.outputs = list_outputs(manifest.run_dir(), stage_dir);
  rec.wall_seconds = wall_seconds;
  rec.status = status;
  const std::size_t count = rec.outputs.size();
  manifest.record(std::move(rec));
  std::cout << "[" << stage << "] " << status << " (" << count << " artifacts)\n";
}

/// Artifacts hash of a completed upstream stage, or a MissingArtifact error
/// telling the user which command to run.
std::string upstream_hash(const RunManifest& manifest, const std::string& stage,
                          const std::string& run_first) {
  const StageRecord* r = manifest.find(stage);
  if (!r || (r->status != "complete" && r->status != "cached")) {
    throw MissingArtifact("stage '" + stage + "' has not completed; run '" + run_first +
                          "' first");
  }
  return r->artifacts_hash;
}

Dataset load_dataset_artifact(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "dataset";
  if (!std::filesystem::exists(dir / "manifest.json")) {
    throw MissingArtifact("dataset not found at " + dir.string() + "; run gen-data first");
  }
  return load_dataset(dir);
}

LdmBundle load_bundle_artifact(const std::filesystem::path& run_dir, const std::string& name) {
  const auto path = run_dir / "models" / name;
  if (!std::filesystem::exists(path)) {
    throw MissingArtifact("model checkpoint not found at " + path.string() +
                          "; run train first");
  }
  return load_bundle(path);
}

Tensor first_images(const Dataset& ds, int n, const char* what) {
  if (n > ds.count()) {
    throw ConfigError(std::string(what) + " asks for " + std::to_string(n) +
                      " images but the dataset holds " + std::to_string(ds.count()));
  }
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (int i = 0; i < n; ++i) rows.push_back(ds.images.slice_sample(i));
  return rows.empty() ? Tensor(0, ds.images.c(), ds.images.h(), ds.images.w()) : stack(rows);
}

Tensor load_adv_batch(const std::filesystem::path& run_dir, const std::string& method, int n) {
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto path = run_dir / "protect" / method / ("adv_" + image_id(i).substr(4) + ".npy");
    if (!std::filesystem::exists(path)) {
      throw MissingArtifact("protected image missing: " + path.string() +
                            "; run protect first (or raise protect.images)");
    }
    rows.push_back(read_npy(path));
  }
  if (rows.empty()) throw MissingArtifact("no protected images for method " + method);
  return stack(rows);
}

void write_image_batch(const std::filesystem::path& dir, const Tensor& batch) {
  write_npy(dir / "batch.npy", batch);
  for (int i = 0; i < batch.n(); ++i) {
    write_png(dir / (image_id(i) + ".png"), batch.slice_sample(i));
  }
}

Tensor load_mask(const std::filesystem::path& config_dir, const std::string& rel) {
  std::filesystem::path p = rel;
  if (p.is_relative()) p = config_dir / p;
  if (!std::filesystem::exists(p)) {
    throw MissingArtifact("inpaint mask not found: " + p.string());
  }
  const Tensor img = read_png(p);
  Tensor mask(1, 1, img.h(), img.w());
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      mask.at(0, 0, y, x) = img.at(0, 0, y, x) > 0.5 ? 1.0 : 0.0;
    }
  }
  return mask;
}

const Tensor* maybe_cond(const LdmBundle& bundle, const EditRequest& r, int n, Tensor& storage) {
  if (r.cond_class < 0) return nullptr;
  storage = broadcast_cond(bundle.denoiser.class_embedding(r.cond_class), n);
  return &storage;
}

}  // namespace

void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string key = stage_key(cfg.section("dataset"), {});
  const auto dir = cfg.out_dir() / "dataset";
  if (!begin_stage(manifest, "gen-data", key, dir, opt, /*error_if_dirty=*/true)) return;

  const auto t0 = Clock::now();
  const Dataset ds = make_dataset(cfg.dataset_spec());
  save_dataset(dir, ds);
  finish_stage(manifest, "gen-data", key, dir, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

struct TrainedBundle {
  LdmBundle bundle;
  TrainHistory ae_hist, dm_hist;
};

TrainedBundle train_one_bundle(const Dataset& ds, const ExperimentConfig::TrainSettings& s,
                               const std::string& tag, std::ostream* log) {
  TrainedBundle out;
  out.bundle.ae_arch = s.ae_arch;
  out.bundle.dn_arch = s.dn_arch;
  out.bundle.schedule = s.schedule;

  Rng init(Rng::derive(s.init_seed, "init/" + tag));
  out.bundle.encoder = EncoderNet(s.ae_arch);
  out.bundle.decoder = DecoderNet(s.ae_arch);
  out.bundle.encoder.init(init);
  out.bundle.decoder.init(init);

  AeTrainConfig ae = s.ae;
  ae.seed = Rng::derive(ae.seed, "ae/" + tag);
  out.ae_hist = train_autoencoder(out.bundle.encoder, out.bundle.decoder, ds, ae, log);

  out.bundle.latent_stats = compute_latent_stats(out.bundle.encoder, ds.images);

  const Tensor zn = out.bundle.normalize_latent(out.bundle.encode(ds.images));
  out.bundle.denoiser = DenoiserNet(s.dn_arch);
  out.bundle.denoiser.init(init);
  DmTrainConfig dm = s.dm;
  dm.seed = Rng::derive(dm.seed, "dm/" + tag);
  out.dm_hist = train_denoiser(out.bundle.denoiser, zn, ds.labels, s.schedule, dm, log);

  out.bundle.meta = {{"trained", out.ae_hist.converged && out.dm_hist.converged},
                     {"tag", tag},
                     {"ae_val_rmse", out.ae_hist.final_metric},
                     {"dm_val_loss", out.dm_hist.final_metric}};
  return out;
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string data_hash = upstream_hash(manifest, "gen-data", "gen-data");
  const std::string key = stage_key(cfg.section("train"), {data_hash});
  const auto dir = cfg.out_dir() / "models";
  if (!begin_stage(manifest, "train", key, dir, opt, /*error_if_dirty=*/false)) return;

  const auto t0 = Clock::now();
  const Dataset ds = load_dataset_artifact(cfg.out_dir());
  const auto s = cfg.train_settings();

  json history;
  auto run_and_save = [&](const std::string& tag, const std::string& file) {
    TrainedBundle tb = train_one_bundle(ds, s, tag, &std::cout);
    history[tag] = {{"autoencoder", tb.ae_hist.to_json()},
                    {"denoiser", tb.dm_hist.to_json()},
                    {"meta", tb.bundle.meta}};
    save_bundle(dir / file, tb.bundle);
    if (!tb.ae_hist.converged) {
      write_json_atomic(dir / "train_history.json", history);
      finish_stage(manifest, "train", key, dir, seconds_since(t0), "failed");
      throw std::runtime_error("autoencoder for bundle '" + tag +
                               "' missed target RMSE: reached " +
                               std::to_string(tb.ae_hist.final_metric) +
                               " (history saved to models/train_history.json)");
    }
  };

  run_and_save("a", "bundle_a.lsc");
  if (s.transfer_bundle) run_and_save("b", "bundle_b.lsc");

  if (s.pixel_dm) {
    DenoiserNet dn(s.pixel_arch);
    Rng init(Rng::derive(s.init_seed, "init/pixel"));
    dn.init(init);
    TrainHistory hist =
        train_denoiser(dn, to_signed_range(ds.images), {}, s.schedule, s.pixel, &std::cout);
    PixelDmBundle pixel;
    pixel.arch = s.pixel_arch;
    pixel.denoiser = std::move(dn);
    pixel.schedule = s.schedule;
    pixel.meta = {{"trained", hist.converged}, {"dm_val_loss", hist.final_metric}};
    history["pixel"] = {{"denoiser", hist.to_json()}, {"meta", pixel.meta}};
    save_pixel_bundle(dir / "pixel.lsc", pixel);
  }

  write_json_atomic(dir / "train_history.json", history);
  finish_stage(manifest, "train", key, dir, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// protect
// ---------------------------------------------------------------------------

void cmd_protect(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string data_hash = upstream_hash(manifest, "gen-data", "gen-data");
  const std::string train_hash = upstream_hash(manifest, "train", "train");

  const int n = cfg.protect_images();
  std::optional<Dataset> ds;       // loaded lazily: every stage may be cached
  std::optional<LdmBundle> bundle;

  for (const AttackConfig& attack : cfg.attacks()) {
    const std::string stage = "protect:" + attack.method;
    const json section = {{"attack", attack.to_json()}, {"images", n}};
    const std::string key = stage_key(section, {data_hash, train_hash});
    const auto dir = cfg.out_dir() / "protect" / attack.method;
    if (!begin_stage(manifest, stage, key, dir, opt, /*error_if_dirty=*/false)) continue;

    if (!ds) ds = load_dataset_artifact(cfg.out_dir());
    if (!bundle) bundle = load_bundle_artifact(cfg.out_dir(), "bundle_a.lsc");
    const auto t0 = Clock::now();

    std::vector<ProtectionResult> results(n);
    parallel_for(n, opt.jobs, [&](int i) {
      AttackConfig per_image = attack;
      per_image.seed = Rng::derive(attack.seed, "img/" + std::to_string(i));
      const Tensor x = ds->images.slice_sample(i);
      ProtectionResult res = pgd_protect(x, *bundle, per_image);
      const std::string stem = image_id(i).substr(4);  // zero-padded index
      write_npy(dir / ("adv_" + stem + ".npy"), res.x_adv);
      write_npy(dir / ("delta_" + stem + ".npy"), res.delta);
      write_png(dir / ("adv_" + stem + ".png"), res.x_adv);
      results[i] = std::move(res);
    });

    std::string trace = "image_id,iter,semantic,textural\n";
    std::string timing = "image_id,grad_seconds_per_iter,peak_workspace_bytes\n";
    for (int i = 0; i < n; ++i) {
      const auto& r = results[i];
      const std::size_t iters = std::max(r.semantic_trace.size(), r.textural_trace.size());
      for (std::size_t it = 0; it < iters; ++it) {
        trace += image_id(i);
        trace += ',';
        trace += std::to_string(it);
        trace += ',';
        if (it < r.semantic_trace.size()) trace += csv_number(r.semantic_trace[it]);
        trace += ',';
        if (it < r.textural_trace.size()) trace += csv_number(r.textural_trace[it]);
        trace += '\n';
      }
      timing += image_id(i) + ',' + csv_number(r.grad_seconds_per_iter) + ',' +
                std::to_string(r.peak_workspace_bytes) + '\n';
    }
    atomic_write_file(dir / "trace.csv", trace);
    atomic_write_file(dir / "timing.csv", timing);
    finish_stage(manifest, stage, key, dir, seconds_since(t0));
  }
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

void cmd_edit(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string data_hash = upstream_hash(manifest, "gen-data", "gen-data");
  const std::string train_hash = upstream_hash(manifest, "train", "train");

  const int n = cfg.edit_images();
  if (n > cfg.protect_images()) {
    throw ConfigError("edit.images (" + std::to_string(n) + ") exceeds protect.images (" +
                      std::to_string(cfg.protect_images()) + ")");
  }
  std::vector<std::string> upstream = {data_hash, train_hash};
  std::vector<std::string> sources = {"clean"};
  for (const AttackConfig& a : cfg.attacks()) {
    upstream.push_back(upstream_hash(manifest, "protect:" + a.method, "protect"));
    sources.push_back(a.method);
  }
  const std::string key = stage_key(cfg.section("edit"), upstream);
  const auto dir = cfg.out_dir() / "edit";
  if (!begin_stage(manifest, "edit", key, dir, opt, /*error_if_dirty=*/false)) return;

  const auto t0 = Clock::now();
  const Dataset ds = load_dataset_artifact(cfg.out_dir());
  const LdmBundle bundle = load_bundle_artifact(cfg.out_dir(), "bundle_a.lsc");
  const auto config_dir = std::filesystem::absolute(opt.config_path).parent_path();

  std::map<std::string, Tensor> batches;
  batches["clean"] = first_images(ds, n, "edit.images");
  for (const AttackConfig& a : cfg.attacks()) {
    batches[a.method] = load_adv_batch(cfg.out_dir(), a.method, n);
  }

  const auto requests = cfg.edits();
  for (std::size_t ri = 0; ri < requests.size(); ++ri) {
    const EditRequest& req = requests[ri];
    const std::string tag = request_tag(static_cast<int>(ri), req);

    if (req.kind == "generate") {
      // Source-independent; emitted once under clean/.
      const auto out = dir / "clean" / tag;
      std::filesystem::create_directories(out);
      Tensor cond_storage;
      const Tensor* cond = maybe_cond(bundle, req, req.count, cond_storage);
      write_image_batch(out, generate(bundle, req.count, req.steps, cond, req.seed));
      continue;
    }

    for (const std::string& source : sources) {
      const Tensor& x = batches.at(source);
      const auto out = dir / source / tag;
      std::filesystem::create_directories(out);

      if (req.kind == "sdedit") {
        Tensor cond_storage;
        const Tensor* cond = maybe_cond(bundle, req, x.n(), cond_storage);
        write_image_batch(out, sdedit(x, bundle, req.strength, req.steps, cond, req.seed));
      } else if (req.kind == "inpaint") {
        const Tensor mask = load_mask(config_dir, req.mask);
        Tensor cond_storage;
        const Tensor* cond = maybe_cond(bundle, req, x.n(), cond_storage);
        const InpaintResult res = inpaint(x, mask, bundle, req.steps, cond, req.seed);
        write_image_batch(out, res.image);
        if (res.empty_mask) {
          std::cout << "[edit] warning: " << tag << " mask selects nothing; wrote plain "
                    << "reconstructions\n";
          write_json_atomic(out / "warning.json", json{{"empty_mask", true}});
        }
      } else if (req.kind == "embed_invert") {
        const InversionResult inv =
            invert_embedding(x, bundle, req.invert_iters, req.invert_lr, req.seed);
        write_npy(out / "embedding.npy", inv.embedding);
        std::string trace = "iter,loss\n";
        for (std::size_t i = 0; i < inv.trace.size(); ++i) {
          trace += std::to_string(i) + ',' + csv_number(inv.trace[i]) + '\n';
        }
        atomic_write_file(out / "trace.csv", trace);
        const Tensor cond = broadcast_cond(inv.embedding, n);
        write_image_batch(out, generate(bundle, n, req.steps, &cond,
                                        Rng::derive(req.seed, "samples")));
      }
    }
  }
  finish_stage(manifest, "edit", key, dir, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

void cmd_diagnose(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string data_hash = upstream_hash(manifest, "gen-data", "gen-data");
  const std::string train_hash = upstream_hash(manifest, "train", "train");

  const json& d = cfg.diagnose();
  const int n = d["images"].get<int>();
  const std::uint64_t seed = d["seed"].get<std::uint64_t>();

  std::vector<std::string> upstream = {data_hash, train_hash};
  const bool needs_protect = d["budget_ratio"]["enabled"].get<bool>() ||
                             d["roundtrip"]["enabled"].get<bool>() ||
                             d["transfer"]["enabled"].get<bool>();
  if (needs_protect) {
    if (n > cfg.protect_images()) {
      throw ConfigError("diagnose.images (" + std::to_string(n) +
                        ") exceeds protect.images (" + std::to_string(cfg.protect_images()) +
                        ")");
    }
    for (const AttackConfig& a : cfg.attacks()) {
      upstream.push_back(upstream_hash(manifest, "protect:" + a.method, "protect"));
    }
  }
  const std::string key = stage_key(cfg.section("diagnose"), upstream);
  const auto dir = cfg.out_dir() / "diagnose";
  if (!begin_stage(manifest, "diagnose", key, dir, opt, /*error_if_dirty=*/false)) return;

  const auto t0 = Clock::now();
  const Dataset ds = load_dataset_artifact(cfg.out_dir());
  const LdmBundle bundle = load_bundle_artifact(cfg.out_dir(), "bundle_a.lsc");
  const Tensor clean = first_images(ds, n, "diagnose.images");
  std::vector<std::string> ids(n);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    ids[i] = image_id(i);
    labels[i] = ds.labels[i];
  }
  json summary;

  if (d["budget_ratio"]["enabled"].get<bool>()) {
    const int bins = d["budget_ratio"]["bins"].get<int>();
    for (const AttackConfig& a : cfg.attacks()) {
      const Tensor adv = load_adv_batch(cfg.out_dir(), a.method, n);
      const BudgetRatioReport rep = budget_ratio_report(ids, labels, clean, adv, bundle, bins);
      atomic_write_file(dir / ("budget_ratio_" + a.method + ".csv"), rep.rows_csv());
      atomic_write_file(dir / ("budget_ratio_hist_" + a.method + ".csv"), rep.histogram_csv());
      summary["budget_ratio"][a.method] = rep.summary();
    }
  }

  if (d["roundtrip"]["enabled"].get<bool>()) {
    const double strength = d["roundtrip"]["strength"].get<double>();
    const int steps = d["roundtrip"]["steps"].get<int>();
    const std::uint64_t edit_seed = Rng::derive(seed, "roundtrip");
    std::string csv = "method,image_id,similarity\n";
    auto run_source = [&](const std::string& name, const Tensor& x) {
      const std::vector<double> sims =
          roundtrip_reflection(x, bundle, strength, steps, edit_seed);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        csv += name + ',' + ids[i] + ',' + csv_number(sims[i]) + '\n';
        total += sims[i];
      }
      summary["roundtrip"][name] = total / std::max(1, n);
    };
    run_source("clean", clean);
    for (const AttackConfig& a : cfg.attacks()) {
      run_source(a.method, load_adv_batch(cfg.out_dir(), a.method, n));
    }
    atomic_write_file(dir / "roundtrip.csv", csv);
  }

  if (d["robustness"]["enabled"].get<bool>()) {
    std::vector<double> budgets;
    for (const auto& b : d["robustness"]["budgets"]) budgets.push_back(b.get<double>());
    const RobustnessReport rep = denoiser_robustness_probe(
        clean, bundle, budgets, d["robustness"]["iters"].get<int>(),
        d["robustness"]["strength"].get<double>(), d["robustness"]["steps"].get<int>(),
        Rng::derive(seed, "robustness"));
    atomic_write_file(dir / "robustness.csv", rep.csv());
    for (const auto& row : rep.rows) {
      summary["robustness"].push_back({{"budget", row.budget},
                                       {"loss_before", row.loss_before},
                                       {"loss_after", row.loss_after},
                                       {"similarity", row.similarity}});
    }
  }

  if (d["loss_curve"]["enabled"].get<bool>()) {
    AttackConfig base = make_method(d["loss_curve"]["method"].get<std::string>());
    base.iters = d["loss_curve"]["iters"].get<int>();
    base.seed = Rng::derive(seed, "loss-curve-attack");
    std::vector<int> ts;
    for (const auto& t : d["loss_curve"]["fixed_timesteps"]) ts.push_back(t.get<int>());
    const LossCurvePair pair =
        loss_curve_compare(clean.slice_sample(0), bundle, base, ts,
                           Rng::derive(seed, "loss-curve-probe"));
    atomic_write_file(dir / "loss_curve.csv", pair.csv());
    summary["loss_curve"] = {{"divergence", pair.divergence},
                             {"full_seconds_per_iter", pair.full_seconds_per_iter},
                             {"sds_seconds_per_iter", pair.sds_seconds_per_iter}};
  }

  if (d["transfer"]["enabled"].get<bool>()) {
    const std::string method = d["transfer"]["method"].get<std::string>();
    const LdmBundle target = load_bundle_artifact(cfg.out_dir(), "bundle_b.lsc");
    const Tensor adv = load_adv_batch(cfg.out_dir(), method, n);
    const TransferProbeResult res =
        transfer_probe(clean, adv, bundle, target, d["transfer"]["strength"].get<double>(),
                       d["transfer"]["steps"].get<int>(), Rng::derive(seed, "transfer"));
    std::string csv = "image_id,native_score,transfer_score\n";
    for (int i = 0; i < n; ++i) {
      csv += ids[i] + ',' + csv_number(res.native_scores[i]) + ',' +
             csv_number(res.transfer_scores[i]) + '\n';
    }
    atomic_write_file(dir / "transfer.csv", csv);
    summary["transfer"] = {{"method", method},
                           {"native_mean", res.native_mean},
                           {"transfer_mean", res.transfer_mean}};
  }

  if (d["pixel_probe"]["enabled"].get<bool>()) {
    const auto path = cfg.out_dir() / "models" / "pixel.lsc";
    if (!std::filesystem::exists(path)) {
      throw MissingArtifact("pixel model not found at " + path.string() +
                            "; run train with train.pixel_dm=true");
    }
    const PixelDmBundle pixel = load_pixel_bundle(path);
    const PixelProbeReport rep = pixel_dm_attack_probe(
        clean, pixel, bundle, d["pixel_probe"]["delta"].get<double>(),
        d["pixel_probe"]["iters"].get<int>(), d["pixel_probe"]["strength"].get<double>(),
        d["pixel_probe"]["steps"].get<int>(), Rng::derive(seed, "pixel-probe"));
    atomic_write_file(dir / "pixel_probe.csv", rep.csv());
    summary["pixel_probe"] = {{"delta", rep.delta},
                              {"iters", rep.iters},
                              {"similarity", rep.similarity},
                              {"clean_preservation", rep.clean_preservation},
                              {"attacked_preservation", rep.attacked_preservation}};
  }

  write_json_atomic(dir / "summary.json", summary);
  finish_stage(manifest, "diagnose", key, dir, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void cmd_evaluate(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string data_hash = upstream_hash(manifest, "gen-data", "gen-data");
  const std::string train_hash = upstream_hash(manifest, "train", "train");
  const std::string edit_hash = upstream_hash(manifest, "edit", "edit");
  std::vector<std::string> upstream = {data_hash, train_hash, edit_hash};
  for (const AttackConfig& a : cfg.attacks()) {
    upstream.push_back(upstream_hash(manifest, "protect:" + a.method, "protect"));
  }
  const std::string key = stage_key(cfg.section("evaluate"), upstream);
  const auto dir = cfg.out_dir() / "evaluate";
  if (!begin_stage(manifest, "evaluate", key, dir, opt, /*error_if_dirty=*/false)) return;

  const auto t0 = Clock::now();
  const Dataset ds = load_dataset_artifact(cfg.out_dir());
  const LdmBundle bundle = load_bundle_artifact(cfg.out_dir(), "bundle_a.lsc");
  const int n = cfg.edit_images();

  EvalInputs inputs;
  inputs.clean = first_images(ds, n, "edit.images");
  for (int i = 0; i < n; ++i) inputs.ids.push_back(image_id(i));
  for (const AttackConfig& a : cfg.attacks()) {
    inputs.protected_images[a.method] = load_adv_batch(cfg.out_dir(), a.method, n);
  }

  const auto requests = cfg.edits();
  std::vector<std::string> sources = {"clean"};
  for (const AttackConfig& a : cfg.attacks()) sources.push_back(a.method);
  for (std::size_t ri = 0; ri < requests.size(); ++ri) {
    const EditRequest& req = requests[ri];
    if (req.kind != "sdedit") continue;  // the metric table is per edit strength
    const std::string tag = request_tag(static_cast<int>(ri), req);
    for (const std::string& source : sources) {
      const auto path = cfg.out_dir() / "edit" / source / tag / "batch.npy";
      if (!std::filesystem::exists(path)) {
        throw MissingArtifact("edited batch missing: " + path.string() + "; run edit first");
      }
      inputs.edited[source][req.strength] = read_npy(path);
    }
  }

  const MetricsReport report = build_report(inputs, bundle, cfg.metric_set());
  atomic_write_file(dir / "metrics.csv", report.to_csv());
  write_json_atomic(dir / "summary.json", report.summary(cfg.evaluate_min_samples()));
  finish_stage(manifest, "evaluate", key, dir, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void cmd_report(const ExperimentConfig& cfg, const CliOptions& opt) {
  RunManifest manifest = RunManifest::load_or_create(cfg.out_dir());
  const std::string eval_hash = upstream_hash(manifest, "evaluate", "evaluate");
  const std::string diag_hash = upstream_hash(manifest, "diagnose", "diagnose");
  const std::string key = stage_key(json{{"report", 1}}, {eval_hash, diag_hash});
  const auto dir = cfg.out_dir() / "report";
  if (!begin_stage(manifest, "report", key, dir, opt, /*error_if_dirty=*/false)) return;

  const auto t0 = Clock::now();
  const json eval_summary = read_json_file(cfg.out_dir() / "evaluate" / "summary.json");
  const json diag_summary = read_json_file(cfg.out_dir() / "diagnose" / "summary.json");
  json train_history;
  if (std::filesystem::exists(cfg.out_dir() / "models" / "train_history.json")) {
    train_history = read_json_file(cfg.out_dir() / "models" / "train_history.json");
  }

  json report;
  report["dataset"] = cfg.section("dataset");
  report["evaluation"] = eval_summary;
  report["diagnostics"] = diag_summary;
  report["training"] = train_history;
  report["note"] =
      "feature_distance / ia_score / frechet_feature_distance are feature-based "
      "analogs computed from the toy encoder, not pretrained-network metrics";
  write_json_atomic(dir / "report.json", report);

  std::string md = "# Run report\n\n";
  md += "Feature-based analog metrics (toy encoder features; not pretrained-network "
        "metrics).\n\n";
  md += "## Protection metrics\n\n| method | metric | strength | mean | n |\n";
  md += "|---|---|---|---|---|\n";
  for (const auto& cell : eval_summary) {
    md += "| " + cell["method"].get<std::string>() + " | " +
          cell["metric"].get<std::string>() + " | " + csv_number(cell["strength"].get<double>()) +
          " | " + csv_number(cell["mean"].get<double>()) + " | " +
          std::to_string(cell["count"].get<int>()) + " |\n";
  }
  md += "\n## Diagnostics\n\n```json\n" + diag_summary.dump(2) + "\n```\n";
  atomic_write_file(dir / "report.md", md);
  finish_stage(manifest, "report", key, dir, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

namespace {

int emit_error(const std::string& kind, const std::string& message, int code) {
  const json err = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << err.dump() << "\n";
  std::cerr << "error (" << kind << "): " << message << "\n";
  return code;
}

}  // namespace

int run_command(const std::string& name, const CliOptions& opt) {
  try {
    const ExperimentConfig cfg = ExperimentConfig::load(opt.config_path, opt.seed);
    if (name == "gen-data") {
      cmd_gen_data(cfg, opt);
    } else if (name == "train") {
      cmd_train(cfg, opt);
    } else if (name == "protect") {
      cmd_protect(cfg, opt);
    } else if (name == "edit") {
      cmd_edit(cfg, opt);
    } else if (name == "diagnose") {
      cmd_diagnose(cfg, opt);
    } else if (name == "evaluate") {
      cmd_evaluate(cfg, opt);
    } else if (name == "report") {
      cmd_report(cfg, opt);
    } else {
      return emit_error("config", "unknown command: " + name, kConfig);
    }
    return kOk;
  } catch (const ConfigError& e) {
    return emit_error("config", e.what(), kConfig);
  } catch (const MissingArtifact& e) {
    return emit_error("missing_artifact", e.what(), kMissingArtifact);
  } catch (const std::invalid_argument& e) {
    return emit_error("invalid_argument", e.what(), kInvalidArgument);
  } catch (const std::exception& e) {
    return emit_error("runtime", e.what(), kRuntime);
  }
}

}  // namespace latentshield::cli
