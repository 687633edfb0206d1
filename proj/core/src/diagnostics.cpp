#include "latentshield/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

#include "latentshield/diffusion.hpp"
#include "latentshield/metrics.hpp"
#include "latentshield/threats.hpp"

namespace latentshield {

namespace {

double max_abs_diff(const double* a, const double* b, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> rowwise_cosine(const Tensor& fa, const Tensor& fb) {
  if (fa.n() != fb.n()) throw std::invalid_argument("feature batch size mismatch");
  std::vector<double> out(fa.n());
  for (int i = 0; i < fa.n(); ++i) {
    out[i] = cosine_vec(fa.slice_sample(i), fb.slice_sample(i));
  }
  return out;
}

// Fixed (t, eps) probe grid and the mean noise-prediction loss over it.
struct ProbeGrid {
  std::vector<int> ts;
  std::vector<Tensor> eps;
};

ProbeGrid make_probe_grid(const Tensor& shape_like, const NoiseSchedule& sched, int k,
                          std::uint64_t seed) {
  ProbeGrid g;
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    g.ts.push_back(rng.uniform_int(0, sched.T - 1));
    g.eps.push_back(rng.normal_like(shape_like));
  }
  return g;
}

double grid_loss(const Denoiser& denoiser, const Tensor& zn, const ProbeGrid& g,
                 const NoiseSchedule& sched) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.ts.size(); ++i) {
    s += denoiser_loss(denoiser, zn, g.ts[i], g.eps[i], nullptr, sched);
  }
  return s / static_cast<double>(g.ts.size());
}

void require_pixel_trained(const PixelDmBundle& pixel) {
  if (!pixel.meta.is_object() || !pixel.meta.value("trained", false)) {
    throw std::invalid_argument("pixel bundle is not marked trained (meta.trained != true)");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Budget amplification.
// ---------------------------------------------------------------------------

BudgetRatio budget_ratio(const Tensor& x, const Tensor& x_adv, const LdmBundle& bundle) {
  if (!x.same_shape(x_adv)) {
    throw std::invalid_argument("budget_ratio: shape mismatch " + x.shape_str() + " vs " +
                                x_adv.shape_str());
  }
  BudgetRatio r;
  r.delta_x = max_abs_diff(x.data(), x_adv.data(), x.numel());
  const Tensor za = bundle.encode_normalized(x);
  const Tensor zb = bundle.encode_normalized(x_adv);
  r.delta_z = max_abs_diff(za.data(), zb.data(), za.numel());
  r.defined = r.delta_x > 0.0;
  r.ratio = r.defined ? r.delta_z / r.delta_x : 0.0;
  return r;
}

BudgetRatioReport budget_ratio_report(const std::vector<std::string>& ids,
                                      const std::vector<int>& labels, const Tensor& clean,
                                      const Tensor& adv, const LdmBundle& bundle, int bins) {
  const int n = clean.n();
  if (adv.n() != n || static_cast<int>(ids.size()) != n ||
      static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("budget_ratio_report: ids/labels/batch sizes disagree");
  }
  if (bins < 1) throw std::invalid_argument("budget_ratio_report: bins must be >= 1");

  const Tensor za = bundle.encode_normalized(clean);
  const Tensor zb = bundle.encode_normalized(adv);
  const std::size_t px = clean.numel() / std::max(1, n);
  const std::size_t pz = za.numel() / std::max(1, n);

  BudgetRatioReport rep;
  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0) throw std::invalid_argument("budget_ratio_report: negative label");
    max_label = std::max(max_label, labels[i]);
    BudgetRatioRow row;
    row.image_id = ids[i];
    row.label = labels[i];
    row.r.delta_x = max_abs_diff(clean.data() + i * px, adv.data() + i * px, px);
    row.r.delta_z = max_abs_diff(za.data() + i * pz, zb.data() + i * pz, pz);
    row.r.defined = row.r.delta_x > 0.0;
    row.r.ratio = row.r.defined ? row.r.delta_z / row.r.delta_x : 0.0;
    rep.rows.push_back(std::move(row));
  }

  double hi = 0.0;
  for (const auto& row : rep.rows) {
    if (row.r.defined) hi = std::max(hi, row.r.ratio);
  }
  if (hi <= 0.0) hi = 1.0;
  rep.hist_edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) rep.hist_edges[b] = hi * b / bins;
  rep.hist_counts.assign(max_label + 1, std::vector<int>(bins, 0));
  for (const auto& row : rep.rows) {
    if (!row.r.defined) continue;
    const int b = std::min(bins - 1, static_cast<int>(row.r.ratio / hi * bins));
    rep.hist_counts[row.label][b] += 1;
  }
  return rep;
}

json BudgetRatioReport::summary() const {
  auto cell = [](const std::vector<double>& ratios, int undefined) {
    return json{{"count", ratios.size()},
                {"undefined", undefined},
                {"median", median(ratios)},
                {"mean", mean(ratios)}};
  };
  std::map<int, std::vector<double>> by_label;
  std::vector<double> all;
  std::map<int, int> undef_by_label;
  int undef = 0;
  for (const auto& row : rows) {
    if (row.r.defined) {
      by_label[row.label].push_back(row.r.ratio);
      all.push_back(row.r.ratio);
    } else {
      undef_by_label[row.label] += 1;
      undef += 1;
    }
  }
  json out;
  out["all"] = cell(all, undef);
  for (const auto& [label, ratios] : by_label) {
    out["label_" + std::to_string(label)] = cell(ratios, undef_by_label[label]);
  }
  return out;
}

std::string BudgetRatioReport::rows_csv() const {
  std::string out = "image_id,label,delta_x,delta_z,ratio,defined\n";
  for (const auto& row : rows) {
    out += row.image_id;
    out += ',';
    out += std::to_string(row.label);
    out += ',';
    out += csv_number(row.r.delta_x);
    out += ',';
    out += csv_number(row.r.delta_z);
    out += ',';
    if (row.r.defined) out += csv_number(row.r.ratio);
    out += ',';
    out += row.r.defined ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::string BudgetRatioReport::histogram_csv() const {
  std::string out = "label,bin_lo,bin_hi,count\n";
  for (std::size_t label = 0; label < hist_counts.size(); ++label) {
    for (std::size_t b = 0; b < hist_counts[label].size(); ++b) {
      out += std::to_string(label);
      out += ',';
      out += csv_number(hist_edges[b]);
      out += ',';
      out += csv_number(hist_edges[b + 1]);
      out += ',';
      out += std::to_string(hist_counts[label][b]);
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Round-trip reflection.
// ---------------------------------------------------------------------------

std::vector<double> roundtrip_reflection(const Tensor& x, const LdmBundle& bundle,
                                         double strength, int steps, std::uint64_t seed) {
  const Tensor edited = sdedit(x, bundle, strength, steps, nullptr, seed);
  const Tensor recon = bundle.decode(bundle.encode(x));
  return rowwise_cosine(bundle.features(edited), bundle.features(recon));
}

// ---------------------------------------------------------------------------
// Denoiser robustness.
// ---------------------------------------------------------------------------

RobustnessReport denoiser_robustness_probe(const Tensor& images, const LdmBundle& bundle,
                                           const std::vector<double>& budgets, int iters,
                                           double edit_strength, int edit_steps,
                                           std::uint64_t seed) {
  bundle.require_trained();
  const Tensor z_raw = bundle.encode(images);
  const Tensor zn = bundle.normalize_latent(z_raw);
  const ProbeGrid grid =
      make_probe_grid(zn, bundle.schedule, 8, Rng::derive(seed, "probe-grid"));
  const double loss_before = grid_loss(bundle.denoiser, zn, grid, bundle.schedule);

  const std::uint64_t edit_seed = Rng::derive(seed, "probe-edit");
  const Tensor recon = bundle.decode(z_raw);
  const Tensor edit_clean = sdedit(recon, bundle, edit_strength, edit_steps, nullptr, edit_seed);
  const Tensor feat_clean = bundle.features(edit_clean);

  RobustnessReport rep;
  for (double budget : budgets) {
    const Tensor z_adv = latent_pgd(z_raw, bundle, budget, budget / 16.0, iters,
                                    Rng::derive(seed, "latent-attack"));
    RobustnessRow row;
    row.budget = budget;
    row.loss_before = loss_before;
    row.loss_after =
        grid_loss(bundle.denoiser, bundle.normalize_latent(z_adv), grid, bundle.schedule);
    const Tensor edit_adv = sdedit(bundle.decode(z_adv), bundle, edit_strength, edit_steps,
                                   nullptr, edit_seed);
    row.similarity = mean(rowwise_cosine(bundle.features(edit_adv), feat_clean));
    rep.rows.push_back(row);
  }
  return rep;
}

std::string RobustnessReport::csv() const {
  std::string out = "budget,loss_before,loss_after,similarity\n";
  for (const auto& r : rows) {
    out += csv_number(r.budget);
    out += ',';
    out += csv_number(r.loss_before);
    out += ',';
    out += csv_number(r.loss_after);
    out += ',';
    out += csv_number(r.similarity);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimator loss-curve agreement.
// ---------------------------------------------------------------------------

LossCurvePair loss_curve_compare(const Tensor& x, const LdmBundle& bundle,
                                 const AttackConfig& base_cfg,
                                 const std::vector<int>& fixed_timesteps,
                                 std::uint64_t probe_seed) {
  if (fixed_timesteps.empty()) {
    throw std::invalid_argument("loss_curve_compare: need at least one fixed timestep");
  }
  base_cfg.validate();
  if (!base_cfg.use_semantic) {
    throw std::invalid_argument("loss_curve_compare: " + base_cfg.method +
                                " has no semantic term to estimate");
  }
  bundle.require_trained();
  const Tensor z_shape = bundle.encode(x);
  Rng rng(Rng::derive(probe_seed, "losscurve"));
  std::vector<Tensor> eps;
  eps.reserve(fixed_timesteps.size());
  for (std::size_t i = 0; i < fixed_timesteps.size(); ++i) {
    eps.push_back(rng.normal_like(z_shape));
  }
  const auto eval = [&](const Tensor& xi) {
    double s = 0.0;
    for (std::size_t i = 0; i < fixed_timesteps.size(); ++i) {
      s += semantic_loss(xi, bundle, fixed_timesteps[i], eps[i]);
    }
    return s / static_cast<double>(fixed_timesteps.size());
  };

  // The same projected sign-ascent loop as the protection path, but run
  // inline so both estimators consume identical per-iteration (t, eps) draws:
  // anything the curves disagree on is then estimator bias, not sampling.
  const Tensor target = base_cfg.use_textural ? default_target_texture(x.h(), x.c()) : Tensor();
  LossCurvePair out;
  const auto run = [&](bool use_sds, std::vector<double>& trace) {
    Tensor xa = x;
    Rng draws(Rng::derive(base_cfg.seed, "losscurve/attack"));
    const double sgn = base_cfg.direction == AttackDirection::ascent ? 1.0 : -1.0;
    trace.push_back(eval(x));
    double seconds = 0.0;
    for (int it = 0; it < base_cfg.iters; ++it) {
      const auto t0 = std::chrono::steady_clock::now();
      Tensor g(x.n(), x.c(), x.h(), x.w());
      for (int mc = 0; mc < base_cfg.mc_samples; ++mc) {
        const int t = draws.uniform_int(0, bundle.schedule.T - 1);
        const Tensor e = draws.normal_like(z_shape);
        g.add(use_sds ? sds_gradient(xa, bundle, t, e)
                      : full_semantic_gradient(xa, bundle, t, e));
      }
      g.scale(1.0 / base_cfg.mc_samples);
      if (base_cfg.use_textural) {
        g.add_scaled(textural_gradient(xa, target, bundle), base_cfg.textural_weight);
      }
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (std::size_t i = 0; i < xa.numel(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        const double v = std::clamp(xa[i] + sgn * base_cfg.step * s, x[i] - base_cfg.budget,
                                    x[i] + base_cfg.budget);
        xa[i] = std::clamp(v, 0.0, 1.0);
      }
      trace.push_back(eval(xa));
    }
    return base_cfg.iters > 0 ? seconds / base_cfg.iters : 0.0;
  };
  out.full_seconds_per_iter = run(false, out.full);
  out.sds_seconds_per_iter = run(true, out.sds);

  for (std::size_t i = 0; i < out.full.size(); ++i) {
    if (out.full[i] > 1e-12) {
      out.divergence = std::max(out.divergence, std::abs(out.sds[i] - out.full[i]) / out.full[i]);
    }
  }
  return out;
}

std::string LossCurvePair::csv() const {
  std::string out = "iter,loss_full,loss_sds\n";
  for (std::size_t i = 0; i < full.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += csv_number(full[i]);
    out += ',';
    out += csv_number(i < sds.size() ? sds[i] : 0.0);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-model transfer.
// ---------------------------------------------------------------------------

TransferProbeResult transfer_probe(const Tensor& x, const Tensor& x_adv,
                                   const LdmBundle& source, const LdmBundle& target,
                                   double strength, int steps, std::uint64_t seed) {
  if (!x.same_shape(x_adv)) {
    throw std::invalid_argument("transfer_probe: clean/protected shape mismatch");
  }
  if (source.ae_arch.image_size != target.ae_arch.image_size ||
      source.ae_arch.image_channels != target.ae_arch.image_channels) {
    throw std::invalid_argument("transfer_probe: bundle resolutions differ (" +
                                std::to_string(source.ae_arch.image_size) + " vs " +
                                std::to_string(target.ae_arch.image_size) + ")");
  }
  const auto score_under = [&](const LdmBundle& m) {
    const Tensor e_adv = sdedit(x_adv, m, strength, steps, nullptr, seed);
    const Tensor e_clean = sdedit(x, m, strength, steps, nullptr, seed);
    std::vector<double> s = rowwise_cosine(m.features(e_adv), m.features(e_clean));
    for (double& v : s) v = 1.0 - v;
    return s;
  };
  TransferProbeResult res;
  res.native_scores = score_under(source);
  res.transfer_scores = score_under(target);
  res.native_mean = mean(res.native_scores);
  res.transfer_mean = mean(res.transfer_scores);
  return res;
}

// ---------------------------------------------------------------------------
// Pixel-space probe.
// ---------------------------------------------------------------------------

Tensor pixel_advdm(const Tensor& x, const PixelDmBundle& pixel, double delta, double step,
                   int iters, std::uint64_t seed) {
  require_pixel_trained(pixel);
  if (delta < 0.0) throw std::invalid_argument("pixel budget must be >= 0");
  if (iters < 0) throw std::invalid_argument("pixel_advdm iters must be >= 0");
  if (delta == 0.0 || iters == 0) return x;
  if (!(step > 0.0)) throw std::invalid_argument("pixel step must be positive");

  Rng rng(Rng::derive(seed, "pixel-advdm"));
  Tensor xa = x;
  const int T = pixel.schedule.T;
  for (int it = 0; it < iters; ++it) {
    const int t = rng.uniform_int(0, T - 1);
    const std::vector<int> ts(static_cast<std::size_t>(x.n()), t);
    // Signed-space input the model sees.
    Tensor s = xa;
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = 2.0 * s[i] - 1.0;
    const Tensor eps = rng.normal_like(s);
    const double a = std::sqrt(pixel.schedule.alpha_bars[t]);
    const double b = std::sqrt(1.0 - pixel.schedule.alpha_bars[t]);
    Tensor z_t = s;
    z_t.scale(a).add_scaled(eps, b);
    const Tensor pred = pixel.denoiser.predict(z_t, ts, nullptr);
    Tensor gout(pred.n(), pred.c(), pred.h(), pred.w());
    const double inv = 2.0 / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i) gout[i] = inv * (pred[i] - eps[i]);
    const Tensor dz = pixel.denoiser.backward_input(z_t, ts, nullptr, gout);
    if (dz.has_non_finite()) {
      throw std::runtime_error("pixel_advdm: non-finite gradient at iteration " +
                               std::to_string(it));
    }
    // d z_t / d x = 2a; only the sign matters, but keep the chain explicit.
    for (std::size_t i = 0; i < xa.numel(); ++i) {
      const double g = dz[i] * 2.0 * a;
      const double sgn = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      const double v = std::clamp(xa[i] + step * sgn, x[i] - delta, x[i] + delta);
      xa[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return xa;
}

Tensor pixel_sdedit(const Tensor& x, const PixelDmBundle& pixel, double strength, int steps,
                    std::uint64_t seed) {
  require_pixel_trained(pixel);
  if (!(strength > 0.0) || strength > 1.0) {
    throw std::invalid_argument("pixel_sdedit strength must lie in (0,1], got " +
                                std::to_string(strength));
  }
  if (steps < 1) throw std::invalid_argument("pixel_sdedit steps must be >= 1");
  const int T = pixel.schedule.T;
  const int t_star = std::clamp(static_cast<int>(std::llround(strength * T)), 1, T - 1);
  Rng rng(Rng::derive(seed, "pixel-sdedit"));
  Tensor s = x;
  for (std::size_t i = 0; i < s.numel(); ++i) s[i] = 2.0 * s[i] - 1.0;
  const NoisySample ns = q_sample(s, t_star, rng.normal_like(s), pixel.schedule);
  Tensor out = ddim_sample_range(pixel.denoiser, ns.z_t, t_star, std::min(steps, t_star + 1),
                                 0.0, nullptr, pixel.schedule, rng);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = std::clamp(0.5 * (out[i] + 1.0), 0.0, 1.0);
  }
  return out;
}

PixelProbeReport pixel_dm_attack_probe(const Tensor& images, const PixelDmBundle& pixel,
                                       const LdmBundle& feature_bundle, double delta,
                                       int iters, double edit_strength, int edit_steps,
                                       std::uint64_t seed) {
  const Tensor x_adv =
      pixel_advdm(images, pixel, delta, 1.0 / 255.0, iters, Rng::derive(seed, "attack"));
  const std::uint64_t edit_seed = Rng::derive(seed, "edit");
  const Tensor edit_clean = pixel_sdedit(images, pixel, edit_strength, edit_steps, edit_seed);
  const Tensor edit_adv = pixel_sdedit(x_adv, pixel, edit_strength, edit_steps, edit_seed);

  const Tensor f_img = feature_bundle.features(images);
  const Tensor f_clean = feature_bundle.features(edit_clean);
  const Tensor f_adv = feature_bundle.features(edit_adv);

  PixelProbeReport rep;
  rep.delta = delta;
  rep.iters = iters;
  rep.similarity = mean(rowwise_cosine(f_adv, f_clean));
  rep.clean_preservation = mean(rowwise_cosine(f_clean, f_img));
  rep.attacked_preservation = mean(rowwise_cosine(f_adv, f_img));
  return rep;
}

std::string PixelProbeReport::csv() const {
  std::string out = "delta,iters,similarity,clean_preservation,attacked_preservation\n";
  out += csv_number(delta);
  out += ',';
  out += std::to_string(iters);
  out += ',';
  out += csv_number(similarity);
  out += ',';
  out += csv_number(clean_preservation);
  out += ',';
  out += csv_number(attacked_preservation);
  out += '\n';
  return out;
}

}  // namespace latentshield
