#include "latentshield/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace latentshield {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::linear ? "linear" : "cosine";
}

void NoiseSchedule::check_identities() const {
  if (static_cast<int>(betas.size()) != T || static_cast<int>(alphas.size()) != T ||
      static_cast<int>(alpha_bars.size()) != T) {
    throw std::logic_error("NoiseSchedule: array length != T");
  }
  double prod = 1.0;
  double prev_bar = 1.0;
  for (int t = 0; t < T; ++t) {
    if (!(betas[t] > 0.0 && betas[t] < 1.0)) {
      throw std::logic_error("NoiseSchedule: beta out of (0,1) at t=" + std::to_string(t));
    }
    if (t > 0 && betas[t] < betas[t - 1]) {
      throw std::logic_error("NoiseSchedule: betas must be nondecreasing");
    }
    if (alphas[t] != 1.0 - betas[t]) {
      throw std::logic_error("NoiseSchedule: alphas[t] != 1 - betas[t]");
    }
    prod *= alphas[t];
    if (alpha_bars[t] != prod) {
      throw std::logic_error("NoiseSchedule: alpha_bars[t] != running product");
    }
    if (!(alpha_bars[t] < prev_bar)) {
      throw std::logic_error("NoiseSchedule: alpha_bars not strictly decreasing");
    }
    prev_bar = alpha_bars[t];
  }
}

Tensor Denoiser::backward_input(const Tensor&, std::span<const int>, const Tensor*,
                                const Tensor&) const {
  throw std::logic_error("this denoiser does not support input gradients");
}

NoiseSchedule default_schedule() { return make_schedule(1000, 1e-4, 0.02, ScheduleKind::linear); }

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  if (kind == ScheduleKind::linear) {
    for (int t = 0; t < T; ++t) {
      s.betas[t] = beta_start + (beta_end - beta_start) * (T == 1 ? 0.0 : double(t) / (T - 1));
    }
  } else {
    // Squared-cosine alpha_bar curve; betas derived from consecutive ratios.
    const double offs = 0.008;
    auto f = [&](double u) {
      const double v = std::cos((u + offs) / (1.0 + offs) * 3.14159265358979323846 / 2.0);
      return v * v;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 0; t < T; ++t) {
      const double bar = f(double(t + 1) / T) / f0;
      double beta = 1.0 - bar / prev;
      beta = std::min(0.999, std::max(1e-8, beta));
      s.betas[t] = beta;
      prev *= 1.0 - beta;
    }
  }
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  s.check_identities();
  return s;
}

NoisySample q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.T) {
    throw std::invalid_argument("q_sample: t=" + std::to_string(t) + " outside [0," +
                                std::to_string(schedule.T) + ")");
  }
  if (!z0.same_shape(eps)) {
    throw std::invalid_argument("q_sample: z0 shape " + z0.shape_str() + " != eps shape " +
                                eps.shape_str());
  }
  const double a = std::sqrt(schedule.alpha_bars[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bars[t]);
  NoisySample out;
  out.t = t;
  out.eps = eps;
  out.z_t = z0;
  out.z_t.scale(a).add_scaled(eps, b);
  return out;
}

double denoiser_loss(const Denoiser& denoiser, const Tensor& z0, int t, const Tensor& eps,
                     const Tensor* cond, const NoiseSchedule& schedule) {
  NoisySample ns = q_sample(z0, t, eps, schedule);
  std::vector<int> ts(static_cast<std::size_t>(z0.n()), t);
  Tensor pred = denoiser.predict(ns.z_t, ts, cond);
  if (!pred.same_shape(eps)) {
    throw std::invalid_argument("denoiser_loss: prediction shape " + pred.shape_str() +
                                " != eps shape " + eps.shape_str());
  }
  pred.sub(eps);
  return pred.sq_sum() / static_cast<double>(pred.numel());
}

std::vector<int> ddim_timesteps(int t_start, int steps) {
  if (steps < 1) throw std::invalid_argument("ddim_timesteps: steps must be >= 1");
  std::vector<int> ts;
  ts.reserve(steps);
  if (steps == 1 || t_start == 0) {
    ts.push_back(t_start);
    return ts;
  }
  int prev = -1;
  for (int i = steps - 1; i >= 0; --i) {
    const int t = static_cast<int>(std::llround(double(i) * t_start / (steps - 1)));
    if (t != prev) {
      ts.push_back(t);
      prev = t;
    }
  }
  return ts;  // descending, ends at 0
}

Tensor ddim_sample_range(const Denoiser& denoiser, const Tensor& z_start, int t_start, int steps,
                         double eta, const Tensor* cond, const NoiseSchedule& schedule, Rng& rng,
                         const ReverseStepHook& hook) {
  if (t_start < 0 || t_start >= schedule.T) {
    throw std::invalid_argument("ddim_sample_range: t_start out of range");
  }
  if (steps > schedule.T) {
    throw std::invalid_argument("ddim_sample_range: steps " + std::to_string(steps) + " > T " +
                                std::to_string(schedule.T));
  }
  if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("ddim_sample_range: eta outside [0,1]");

  const std::vector<int> ts = ddim_timesteps(t_start, steps);
  Tensor z = z_start;
  std::vector<int> tb(static_cast<std::size_t>(z.n()), 0);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double ab = schedule.alpha_bars[t];
    const double ab_prev = (i + 1 < ts.size()) ? schedule.alpha_bars[ts[i + 1]] : 1.0;
    std::fill(tb.begin(), tb.end(), t);
    Tensor eps_pred = denoiser.predict(z, tb, cond);

    // z0 estimate, then step to the previous (less noisy) timestep.
    Tensor z0_hat = z;
    z0_hat.add_scaled(eps_pred, -std::sqrt(1.0 - ab)).scale(1.0 / std::sqrt(ab));

    double sigma = 0.0;
    if (eta > 0.0 && ab_prev < 1.0) {
      sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    z = z0_hat;
    z.scale(std::sqrt(ab_prev)).add_scaled(eps_pred, dir);
    if (sigma > 0.0) {
      Tensor noise = rng.normal_like(z);
      z.add_scaled(noise, sigma);
    }
    if (hook) hook(z, (i + 1 < ts.size()) ? ts[i + 1] : -1);
  }
  return z;
}

Tensor ddim_sample(const Denoiser& denoiser, const Tensor& z_T, int steps, double eta,
                   const Tensor* cond, const NoiseSchedule& schedule, Rng& rng) {
  return ddim_sample_range(denoiser, z_T, schedule.T - 1, steps, eta, cond, schedule, rng);
}

}  // namespace latentshield
