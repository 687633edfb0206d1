#include "latentshield/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

namespace latentshield {

std::string to_string(AttackDirection d) {
  return d == AttackDirection::ascent ? "ascent" : "descent";
}

AttackDirection direction_from_string(const std::string& s) {
  if (s == "ascent") return AttackDirection::ascent;
  if (s == "descent") return AttackDirection::descent;
  throw std::invalid_argument("unknown direction: " + s);
}

namespace {

struct MethodRow {
  const char* name;
  bool semantic, textural, sds;
  AttackDirection direction;
};

constexpr MethodRow kMethodTable[] = {
    {"advdm", true, false, false, AttackDirection::ascent},
    {"advdm_minus", true, false, false, AttackDirection::descent},
    {"photoguard", false, true, false, AttackDirection::ascent},
    {"mist", true, true, false, AttackDirection::ascent},
    {"sds_plus", true, false, true, AttackDirection::ascent},
    {"sds_minus", true, false, true, AttackDirection::descent},
    {"sdst", true, true, true, AttackDirection::descent},
};

const MethodRow* find_method(const std::string& name) {
  for (const MethodRow& row : kMethodTable) {
    if (name == row.name) return &row;
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const MethodRow& row : kMethodTable) v.emplace_back(row.name);
    return v;
  }();
  return names;
}

void AttackConfig::validate() const {
  if (!(budget > 0.0 && budget <= 1.0)) {
    throw std::invalid_argument("attack budget must be in (0,1], got " + std::to_string(budget));
  }
  if (!(step > 0.0)) throw std::invalid_argument("attack step must be positive");
  if (iters < 0) throw std::invalid_argument("attack iters must be >= 0");
  if (textural_weight < 0.0) throw std::invalid_argument("textural_weight must be >= 0");
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (!use_semantic && !use_textural) {
    throw std::invalid_argument("attack needs at least one active loss");
  }
  if (use_textural && !use_semantic && textural_weight <= 0.0) {
    throw std::invalid_argument("textural-only attack needs textural_weight > 0");
  }
  const MethodRow* row = find_method(method);
  if (!row) throw std::invalid_argument("unknown method: " + method);
  if (use_semantic != row->semantic || use_textural != row->textural || use_sds != row->sds ||
      direction != row->direction) {
    throw std::invalid_argument("config contradicts method table for " + method);
  }
}

json AttackConfig::to_json() const {
  return {{"method", method},
          {"budget", budget},
          {"step", step},
          {"iters", iters},
          {"textural_weight", textural_weight},
          {"mc_samples", mc_samples},
          {"seed", seed}};
}

AttackConfig AttackConfig::from_json(const json& j) {
  static const std::set<std::string> known = {"method",          "budget",     "step",
                                              "iters",           "textural_weight",
                                              "mc_samples",      "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown attack key '" + key + "'");
  }
  AttackConfig cfg = make_method(j.at("method").get<std::string>());
  cfg.budget = j.value("budget", cfg.budget);
  cfg.step = j.value("step", cfg.step);
  cfg.iters = j.value("iters", cfg.iters);
  cfg.textural_weight = j.value("textural_weight", cfg.textural_weight);
  cfg.mc_samples = j.value("mc_samples", cfg.mc_samples);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

AttackConfig make_method(const std::string& name) {
  const MethodRow* row = find_method(name);
  if (!row) throw std::invalid_argument("unknown method: " + name);
  AttackConfig cfg;
  cfg.method = name;
  cfg.use_semantic = row->semantic;
  cfg.use_textural = row->textural;
  cfg.use_sds = row->sds;
  cfg.direction = row->direction;
  if (!row->textural) cfg.textural_weight = 0.0;
  if (name == "photoguard") cfg.textural_weight = 1.0;
  return cfg;
}

// ---------------------------------------------------------------------------
// Losses & gradients
// ---------------------------------------------------------------------------

namespace {

void require_trained(const LdmBundle& bundle) { bundle.require_trained(); }

void require_t(const LdmBundle& bundle, int t) {
  if (t < 0 || t >= bundle.schedule.T) {
    throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0," +
                                std::to_string(bundle.schedule.T) + ")");
  }
}

/// Chain rule scale from raw latent to normalized latent: columns divide by
/// the per-channel std.
void scale_by_inv_std(Tensor& g, const LatentStats& stats) {
  for (int n = 0; n < g.n(); ++n) {
    for (int c = 0; c < g.c(); ++c) {
      const double inv = 1.0 / stats.std[c];
      for (int y = 0; y < g.h(); ++y) {
        for (int x = 0; x < g.w(); ++x) g.at(n, c, y, x) *= inv;
      }
    }
  }
}

/// Shared front half of the semantic gradients: encode with cache, normalize,
/// forward-noise. Returns z_t; fills coefficients.
Tensor noised_encoding(const Tensor& x, const LdmBundle& bundle, int t, const Tensor& eps,
                       EncoderNet::Cache& ec, double& a_out, double& b_out) {
  require_t(bundle, t);
  Tensor z0 = bundle.encoder.forward(x, &ec);
  z0 = bundle.normalize_latent(z0);
  if (!z0.same_shape(eps)) {
    throw std::invalid_argument("eps shape " + eps.shape_str() + " != latent shape " +
                                z0.shape_str());
  }
  a_out = std::sqrt(bundle.schedule.alpha_bars[t]);
  b_out = std::sqrt(1.0 - bundle.schedule.alpha_bars[t]);
  Tensor zt = z0;
  zt.scale(a_out).add_scaled(eps, b_out);
  return zt;
}

}  // namespace

double semantic_loss_with(const Tensor& x, const LdmBundle& bundle, const Denoiser& denoiser,
                          int t, const Tensor& eps, const Tensor* cond) {
  require_t(bundle, t);
  const Tensor z0 = bundle.encode_normalized(x);
  if (!z0.same_shape(eps)) {
    throw std::invalid_argument("eps shape " + eps.shape_str() + " != latent shape " +
                                z0.shape_str());
  }
  const NoisySample ns = q_sample(z0, t, eps, bundle.schedule);
  std::vector<int> ts(static_cast<std::size_t>(x.n()), t);
  Tensor pred = denoiser.predict(ns.z_t, ts, cond);
  pred.sub(eps);
  return pred.sq_sum() / static_cast<double>(pred.numel());
}

double semantic_loss(const Tensor& x, const LdmBundle& bundle, int t, const Tensor& eps,
                     const Tensor* cond) {
  require_trained(bundle);
  return semantic_loss_with(x, bundle, bundle.denoiser, t, eps, cond);
}

namespace {

void require_target_shape(const Tensor& x, const Tensor& y, const char* fn) {
  if (x.h() != y.h() || x.w() != y.w() || x.c() != y.c() ||
      (y.n() != x.n() && y.n() != 1)) {
    throw std::invalid_argument(std::string(fn) + " target shape mismatch: " + x.shape_str() +
                                " vs " + y.shape_str());
  }
}

// A single-image target applies to every sample in the batch.
Tensor tile_batch(const Tensor& t, int n) {
  std::vector<Tensor> rows(static_cast<std::size_t>(n), t.slice_sample(0));
  return stack(rows);
}

}  // namespace

double textural_loss(const Tensor& x, const Tensor& y, const LdmBundle& bundle) {
  require_target_shape(x, y, "textural_loss");
  Tensor zx = bundle.encode(x);
  Tensor zy = bundle.encode(y);
  if (zy.n() == 1 && zx.n() > 1) zy = tile_batch(zy, zx.n());
  zx.sub(zy);
  return -zx.sq_sum() / static_cast<double>(zx.numel());
}

Tensor full_semantic_gradient_with(const Tensor& x, const LdmBundle& bundle,
                                   const Denoiser& denoiser, int t, const Tensor& eps,
                                   const Tensor* cond, double* loss_out) {
  EncoderNet::Cache ec;
  double a = 0.0, b = 0.0;
  const Tensor zt = noised_encoding(x, bundle, t, eps, ec, a, b);

  std::vector<int> ts(static_cast<std::size_t>(x.n()), t);
  Tensor resid = denoiser.predict(zt, ts, cond);
  resid.sub(eps);
  if (loss_out) *loss_out = resid.sq_sum() / static_cast<double>(resid.numel());

  Tensor gout = resid;
  gout.scale(2.0 / static_cast<double>(resid.numel()));
  Tensor dzt = denoiser.backward_input(zt, ts, cond, gout);
  dzt.scale(a);                               // d z_t / d z0
  scale_by_inv_std(dzt, bundle.latent_stats);  // d z0 / d raw latent
  return bundle.encoder.backward(dzt, ec, nullptr);
}

Tensor full_semantic_gradient(const Tensor& x, const LdmBundle& bundle, int t,
                              const Tensor& eps, const Tensor* cond, double* loss_out) {
  require_trained(bundle);
  // Single forward with a cache, then backward — cheaper than the generic
  // predict + backward_input route, which runs the forward twice.
  EncoderNet::Cache ec;
  double a = 0.0, b = 0.0;
  const Tensor zt = noised_encoding(x, bundle, t, eps, ec, a, b);

  std::vector<int> ts(static_cast<std::size_t>(x.n()), t);
  DenoiserNet::Cache dc;
  Tensor resid = bundle.denoiser.forward(zt, ts, cond, &dc);
  resid.sub(eps);
  if (loss_out) *loss_out = resid.sq_sum() / static_cast<double>(resid.numel());

  Tensor gout = resid;
  gout.scale(2.0 / static_cast<double>(resid.numel()));
  DenoiserNet::BackwardResult back = bundle.denoiser.backward(gout, dc, nullptr);
  back.dz.scale(a);
  scale_by_inv_std(back.dz, bundle.latent_stats);
  return bundle.encoder.backward(back.dz, ec, nullptr);
}

Tensor sds_gradient_with(const Tensor& x, const LdmBundle& bundle, const Denoiser& denoiser,
                         int t, const Tensor& eps, const Tensor* cond, double* loss_out) {
  EncoderNet::Cache ec;
  double a = 0.0, b = 0.0;
  const Tensor zt = noised_encoding(x, bundle, t, eps, ec, a, b);

  std::vector<int> ts(static_cast<std::size_t>(x.n()), t);
  Tensor resid = denoiser.predict(zt, ts, cond);  // inference-only
  resid.sub(eps);
  if (loss_out) *loss_out = resid.sq_sum() / static_cast<double>(resid.numel());

  // Residual flows through d z_t / d x only (denoiser Jacobian dropped).
  Tensor seed = resid;
  seed.scale(1.0 / static_cast<double>(resid.numel()));
  seed.scale(a);
  scale_by_inv_std(seed, bundle.latent_stats);
  return bundle.encoder.backward(seed, ec, nullptr);
}

Tensor sds_gradient(const Tensor& x, const LdmBundle& bundle, int t, const Tensor& eps,
                    const Tensor* cond, double* loss_out) {
  require_trained(bundle);
  return sds_gradient_with(x, bundle, bundle.denoiser, t, eps, cond, loss_out);
}

Tensor textural_gradient(const Tensor& x, const Tensor& y, const LdmBundle& bundle,
                         double* loss_out) {
  require_target_shape(x, y, "textural_gradient");
  EncoderNet::Cache ec;
  Tensor zx = bundle.encoder.forward(x, &ec);
  Tensor zy = bundle.encoder.forward(y, nullptr);
  if (zy.n() == 1 && zx.n() > 1) zy = tile_batch(zy, zx.n());
  Tensor diff = zx;
  diff.sub(zy);
  if (loss_out) *loss_out = -diff.sq_sum() / static_cast<double>(diff.numel());
  Tensor gout = diff;
  gout.scale(-2.0 / static_cast<double>(diff.numel()));
  return bundle.encoder.backward(gout, ec, nullptr);
}

// ---------------------------------------------------------------------------
// PGD
// ---------------------------------------------------------------------------

Tensor default_target_texture(int size, int channels) {
  Tensor y(1, channels, size, size);
  for (int c = 0; c < channels; ++c) {
    for (int yy = 0; yy < size; ++yy) {
      for (int xx = 0; xx < size; ++xx) {
        // 4-px checker with per-channel phase shift: periodic, maximal contrast.
        const int phase = ((yy + c) / 4 + (xx + 2 * c) / 4) % 2;
        y.at(0, c, yy, xx) = phase ? 1.0 : 0.0;
      }
    }
  }
  return y;
}

ProtectionResult pgd_protect(const Tensor& x, const LdmBundle& bundle, const AttackConfig& cfg,
                             const Tensor* target, const PgdIterHook& hook) {
  cfg.validate();
  if (cfg.use_semantic) require_trained(bundle);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (x[i] < 0.0 || x[i] > 1.0) {
      throw std::invalid_argument("pgd_protect input outside [0,1]");
    }
  }
  Tensor y;
  if (cfg.use_textural) {
    y = target ? *target : default_target_texture(x.h(), x.c());
  }

  ProtectionResult res;
  res.x_adv = x;
  Rng rng(Rng::derive(cfg.seed, "pgd/" + cfg.method));
  const Tensor z_probe = bundle.encode(x);  // shape template for eps draws

  double grad_seconds = 0.0;
  const double sgn = cfg.direction == AttackDirection::ascent ? 1.0 : -1.0;
  for (int it = 0; it < cfg.iters; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    grad_stats().reset();

    Tensor g(x.n(), x.c(), x.h(), x.w());
    double sem_loss = 0.0;
    if (cfg.use_semantic) {
      for (int mc = 0; mc < cfg.mc_samples; ++mc) {
        const int t = rng.uniform_int(0, bundle.schedule.T - 1);
        const Tensor eps = rng.normal_like(z_probe);
        double loss = 0.0;
        const Tensor gs = cfg.use_sds
                              ? sds_gradient(res.x_adv, bundle, t, eps, nullptr, &loss)
                              : full_semantic_gradient(res.x_adv, bundle, t, eps, nullptr, &loss);
        g.add(gs);
        sem_loss += loss;
      }
      g.scale(1.0 / cfg.mc_samples);
      sem_loss /= cfg.mc_samples;
    }
    double tex_loss = 0.0;
    if (cfg.use_textural) {
      const Tensor gt = textural_gradient(res.x_adv, y, bundle, &tex_loss);
      g.add_scaled(gt, cfg.textural_weight);
    }
    if (g.has_non_finite()) {
      throw std::runtime_error("pgd_protect: non-finite gradient at iteration " +
                               std::to_string(it));
    }
    res.peak_workspace_bytes =
        std::max(res.peak_workspace_bytes, grad_stats().bytes_cached);
    grad_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (cfg.use_semantic) res.semantic_trace.push_back(sem_loss);
    if (cfg.use_textural) res.textural_trace.push_back(tex_loss);

    // Signed step, then project onto the budget ball and the value range.
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = res.x_adv[i] + sgn * cfg.step * s;
      v = std::clamp(v, x[i] - cfg.budget, x[i] + cfg.budget);
      res.x_adv[i] = std::clamp(v, 0.0, 1.0);
    }
    if (hook) hook(it, res.x_adv);
  }
  if (cfg.iters > 0) res.grad_seconds_per_iter = grad_seconds / cfg.iters;
  res.delta = res.x_adv;
  res.delta.sub(x);
  return res;
}

Tensor latent_pgd(const Tensor& z, const LdmBundle& bundle, double budget, double step,
                  int iters, std::uint64_t seed) {
  require_trained(bundle);
  if (budget < 0.0) throw std::invalid_argument("latent budget must be >= 0");
  if (iters < 0) throw std::invalid_argument("latent_pgd iters must be >= 0");
  if (budget == 0.0 || iters == 0) return z;
  if (!(step > 0.0)) throw std::invalid_argument("latent step must be positive");

  const Tensor z0 = bundle.normalize_latent(z);
  Tensor zn = z0;
  Rng rng(Rng::derive(seed, "latent_pgd"));
  std::vector<int> ts(static_cast<std::size_t>(z.n()), 0);
  for (int it = 0; it < iters; ++it) {
    const int t = rng.uniform_int(0, bundle.schedule.T - 1);
    const Tensor eps = rng.normal_like(zn);
    const double a = std::sqrt(bundle.schedule.alpha_bars[t]);
    const double b = std::sqrt(1.0 - bundle.schedule.alpha_bars[t]);
    Tensor zt = zn;
    zt.scale(a).add_scaled(eps, b);
    std::fill(ts.begin(), ts.end(), t);
    DenoiserNet::Cache dc;
    Tensor pred = bundle.denoiser.forward(zt, ts, nullptr, &dc);
    Tensor gout = pred;
    gout.sub(eps);
    gout.scale(2.0 / static_cast<double>(gout.numel()));
    DenoiserNet::BackwardResult back = bundle.denoiser.backward(gout, dc, nullptr);
    if (back.dz.has_non_finite()) {
      throw std::runtime_error("latent_pgd: non-finite gradient at iteration " +
                               std::to_string(it));
    }
    for (std::size_t i = 0; i < zn.numel(); ++i) {
      const double gi = back.dz[i] * a;  // chain through z_t = a*zn + b*eps
      const double s = gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0);
      zn[i] = std::clamp(zn[i] + step * s, z0[i] - budget, z0[i] + budget);
    }
  }
  return bundle.denormalize_latent(zn);
}

}  // namespace latentshield
