#include "latentshield/threats.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "latentshield/diffusion.hpp"
#include "latentshield/nn.hpp"

namespace latentshield {

namespace {

const std::set<std::string> kKinds = {"sdedit", "inpaint", "embed_invert", "generate"};

int renoise_timestep(double strength, int T) {
  const int t = static_cast<int>(std::llround(strength * T));
  return std::clamp(t, 1, T - 1);
}

}  // namespace

void EditRequest::validate() const {
  if (!kKinds.count(kind)) {
    throw std::invalid_argument("unknown edit kind '" + kind +
                                "' (expected sdedit|inpaint|embed_invert|generate)");
  }
  if (steps < 1) throw std::invalid_argument("edit steps must be >= 1");
  if (kind == "sdedit" && (!(strength > 0.0) || strength > 1.0)) {
    throw std::invalid_argument("sdedit strength must lie in (0,1], got " +
                                std::to_string(strength));
  }
  if (kind == "inpaint" && mask.empty()) {
    throw std::invalid_argument("inpaint requires a mask image");
  }
  if (kind == "embed_invert") {
    if (invert_iters < 0) throw std::invalid_argument("invert_iters must be >= 0");
    if (invert_iters > 0 && !(invert_lr > 0.0)) {
      throw std::invalid_argument("invert_lr must be positive");
    }
  }
  if (kind == "generate" && count < 0) {
    throw std::invalid_argument("generate count must be >= 0");
  }
}

json EditRequest::to_json() const {
  return json{{"kind", kind},
              {"strength", strength},
              {"steps", steps},
              {"cond_class", cond_class},
              {"mask", mask},
              {"invert_iters", invert_iters},
              {"invert_lr", invert_lr},
              {"count", count},
              {"seed", seed}};
}

EditRequest EditRequest::from_json(const json& j) {
  static const std::set<std::string> known = {"kind",         "strength",  "steps",
                                              "cond_class",   "mask",      "invert_iters",
                                              "invert_lr",    "count",     "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown edit key '" + key + "'");
  }
  EditRequest r;
  r.kind = j.value("kind", r.kind);
  r.strength = j.value("strength", r.strength);
  r.steps = j.value("steps", r.steps);
  r.cond_class = j.value("cond_class", r.cond_class);
  r.mask = j.value("mask", r.mask);
  r.invert_iters = j.value("invert_iters", r.invert_iters);
  r.invert_lr = j.value("invert_lr", r.invert_lr);
  r.count = j.value("count", r.count);
  r.seed = j.value("seed", r.seed);
  r.validate();
  return r;
}

Tensor broadcast_cond(const Tensor& row, int n) {
  if (row.n() != 1 || row.h() != 1 || row.w() != 1) {
    throw std::invalid_argument("condition row must be (1, cond_dim, 1, 1), got " +
                                row.shape_str());
  }
  Tensor out(n, row.c(), 1, 1);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < row.c(); ++d) out.at(i, d, 0, 0) = row[d];
  }
  return out;
}

Tensor sdedit(const Tensor& x, const LdmBundle& bundle, double strength, int steps,
              const Tensor* cond, std::uint64_t seed) {
  bundle.require_trained();
  if (!(strength > 0.0) || strength > 1.0) {
    throw std::invalid_argument("sdedit strength must lie in (0,1], got " +
                                std::to_string(strength));
  }
  if (steps < 1) throw std::invalid_argument("sdedit steps must be >= 1");

  const int t_star = renoise_timestep(strength, bundle.schedule.T);
  Rng rng(Rng::derive(seed, "sdedit"));
  const Tensor zn = bundle.encode_normalized(x);
  const Tensor eps = rng.normal_like(zn);
  const NoisySample ns = q_sample(zn, t_star, eps, bundle.schedule);
  const Tensor z0 = ddim_sample_range(bundle.denoiser, ns.z_t, t_star,
                                      std::min(steps, t_star + 1), 0.0, cond, bundle.schedule,
                                      rng);
  return bundle.decode_denormalized(z0);
}

InpaintResult inpaint(const Tensor& x, const Tensor& mask, const LdmBundle& bundle, int steps,
                      const Tensor* cond, std::uint64_t seed) {
  bundle.require_trained();
  if (steps < 1) throw std::invalid_argument("inpaint steps must be >= 1");
  if (mask.c() != 1 || mask.h() != x.h() || mask.w() != x.w()) {
    throw std::invalid_argument("mask shape " + mask.shape_str() +
                                " does not match image grid " + x.shape_str());
  }
  if (mask.n() != 1 && mask.n() != x.n()) {
    throw std::invalid_argument("mask batch must be 1 or match the image batch");
  }
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) {
      throw std::invalid_argument("mask entries must be exactly 0 or 1");
    }
  }

  const Tensor zn_true = bundle.encode_normalized(x);
  const int f = AutoencoderArch::kDownsample;

  // Majority-pool the pixel mask onto the latent grid, shared across latent
  // channels: a latent cell is regenerated when most of its pixels are.
  Tensor mz(x.n(), 1, zn_true.h(), zn_true.w());
  bool any = false;
  for (int n = 0; n < x.n(); ++n) {
    const int mn = mask.n() == 1 ? 0 : n;
    for (int zy = 0; zy < zn_true.h(); ++zy) {
      for (int zx = 0; zx < zn_true.w(); ++zx) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy) {
          for (int dx = 0; dx < f; ++dx) acc += mask.at(mn, 0, zy * f + dy, zx * f + dx);
        }
        const double cell = acc / (f * f) > 0.5 ? 1.0 : 0.0;
        mz.at(n, 0, zy, zx) = cell;
        any = any || cell > 0.0;
      }
    }
  }
  if (!any) {
    return {bundle.decode_denormalized(zn_true), true};
  }

  Rng rng(Rng::derive(seed, "inpaint"));
  const int t_start = bundle.schedule.T - 1;
  // Re-noise the true encoding to the sampler's current timestep and pin the
  // kept region to it, so kept content and the evolving sample stay at the
  // same noise level. The final call (t == -1) pins the clean encoding.
  const auto blend = [&](Tensor& z, int t) {
    Tensor known = zn_true;
    if (t >= 0) {
      known = q_sample(zn_true, t, rng.normal_like(zn_true), bundle.schedule).z_t;
    }
    for (int n = 0; n < z.n(); ++n) {
      for (int c = 0; c < z.c(); ++c) {
        for (int zy = 0; zy < z.h(); ++zy) {
          for (int zx = 0; zx < z.w(); ++zx) {
            if (mz.at(n, 0, zy, zx) == 0.0) z.at(n, c, zy, zx) = known.at(n, c, zy, zx);
          }
        }
      }
    }
  };

  Tensor z = rng.normal_like(zn_true);
  blend(z, t_start);
  const Tensor z0 = ddim_sample_range(bundle.denoiser, z, t_start,
                                      std::min(steps, t_start + 1), 0.0, cond, bundle.schedule,
                                      rng, blend);
  return {bundle.decode_denormalized(z0), false};
}

InversionResult invert_embedding(const Tensor& images, const LdmBundle& bundle, int iters,
                                 double lr, std::uint64_t seed) {
  bundle.require_trained();
  if (images.n() < 3) {
    throw std::invalid_argument("embedding inversion needs at least 3 images, got " +
                                std::to_string(images.n()));
  }
  if (iters < 0) throw std::invalid_argument("invert iters must be >= 0");
  if (iters > 0 && !(lr > 0.0)) throw std::invalid_argument("invert lr must be positive");

  Rng rng(Rng::derive(seed, "invert"));
  const int D = bundle.dn_arch.cond_dim;
  InversionResult res;
  res.embedding = Tensor(1, D, 1, 1);
  rng.fill_normal(res.embedding);
  res.embedding.scale(0.01);
  if (iters == 0) return res;

  const Tensor z_all = bundle.encode_normalized(images);
  const int N = z_all.n();
  const std::size_t per = z_all.numel() / N;
  const int T = bundle.schedule.T;

  Adam opt(lr);
  Tensor grad(1, D, 1, 1);
  Tensor* params[] = {&res.embedding};
  const Tensor* grads[] = {&grad};
  res.trace.reserve(iters);

  for (int it = 0; it < iters; ++it) {
    std::vector<int> ts(N);
    for (int& t : ts) t = rng.uniform_int(0, T - 1);
    const Tensor eps = rng.normal_like(z_all);
    Tensor z_t = z_all;
    for (int n = 0; n < N; ++n) {
      const double a = std::sqrt(bundle.schedule.alpha_bars[ts[n]]);
      const double b = std::sqrt(1.0 - bundle.schedule.alpha_bars[ts[n]]);
      double* row = z_t.data() + n * per;
      const double* erow = eps.data() + n * per;
      for (std::size_t i = 0; i < per; ++i) row[i] = a * row[i] + b * erow[i];
    }

    const Tensor cond = broadcast_cond(res.embedding, N);
    DenoiserNet::Cache cache;
    const Tensor pred = bundle.denoiser.forward(z_t, ts, &cond, &cache);

    double loss = 0.0;
    Tensor gout(pred.n(), pred.c(), pred.h(), pred.w());
    const double inv = 1.0 / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double r = pred[i] - eps[i];
      loss += r * r * inv;
      gout[i] = 2.0 * r * inv;
    }
    const auto back = bundle.denoiser.backward(gout, cache, nullptr);

    for (int d = 0; d < D; ++d) grad[d] = 0.0;
    for (int n = 0; n < N; ++n) {
      for (int d = 0; d < D; ++d) grad[d] += back.dcond.at(n, d, 0, 0);
    }

    const double ref = res.trace.empty() ? loss : res.trace.front();
    if (!std::isfinite(loss) || grad.has_non_finite() ||
        loss > 1e3 * std::max(ref, 1e-9)) {
      res.trace.push_back(loss);
      throw InversionDiverged("embedding inversion diverged at iteration " +
                                  std::to_string(it) + " (loss " + std::to_string(loss) + ")",
                              res.trace);
    }
    res.trace.push_back(loss);
    opt.step(params, grads);
  }
  return res;
}

Tensor generate(const LdmBundle& bundle, int count, int steps, const Tensor* cond,
                std::uint64_t seed) {
  bundle.require_trained();
  if (count < 0) throw std::invalid_argument("generate count must be >= 0");
  if (steps < 1) throw std::invalid_argument("generate steps must be >= 1");
  const int zs = bundle.ae_arch.image_size / AutoencoderArch::kDownsample;
  if (count == 0) {
    return Tensor(0, bundle.ae_arch.image_channels, bundle.ae_arch.image_size,
                  bundle.ae_arch.image_size);
  }
  Rng rng(Rng::derive(seed, "generate"));
  Tensor z_T(count, bundle.ae_arch.latent_channels, zs, zs);
  rng.fill_normal(z_T);
  const Tensor z0 =
      ddim_sample(bundle.denoiser, z_T, std::min(steps, bundle.schedule.T), 0.0, cond,
                  bundle.schedule, rng);
  return bundle.decode_denormalized(z0);
}

}  // namespace latentshield
