#pragma once

#include <functional>
#include <span>
#include <vector>

#include "latentshield/tensor.hpp"

namespace latentshield {

enum class ScheduleKind { linear, cosine };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Forward-process coefficients: betas[t], alphas[t] = 1 - betas[t],
/// alpha_bars[t] = prod_{s<=t} alphas[s]. t runs over [0, T).
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::linear;
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> betas, alphas, alpha_bars;

  /// Recomputes alphas/alpha_bars from betas and checks they match the
  /// stored arrays exactly; also checks beta range and monotonicity.
  void check_identities() const;

  /// True when alpha_bars[T-1] < 0.05, i.e. z_T is close to an isotropic
  /// Gaussian. Required for training-grade schedules, not for toy ones.
  bool terminal_near_gaussian() const { return alpha_bars.back() < 0.05; }
};

/// Default training schedule used across the project.
NoiseSchedule default_schedule();

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind);

struct NoisySample {
  Tensor z_t;
  int t = 0;
  Tensor eps;
};

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
NoisySample q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// Noise-estimator interface. Implementations must be usable inference-only
/// from multiple threads. `cond` is a per-sample embedding (n, emb_dim) or
/// null for unconditional prediction.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict(const Tensor& z_t, std::span<const int> t, const Tensor* cond) const = 0;

  /// Reverse-mode product gout^T * (d predict / d z_t). Implementations may
  /// recompute the forward pass. Default: gradient support not available.
  virtual Tensor backward_input(const Tensor& z_t, std::span<const int> t, const Tensor* cond,
                                const Tensor& gout) const;
};

/// Wraps plain callables as a Denoiser; used for analytic test oracles. The
/// optional second callable supplies the input VJP for known Jacobians.
class FunctionalDenoiser : public Denoiser {
 public:
  using Fn = std::function<Tensor(const Tensor&, std::span<const int>, const Tensor*)>;
  using VjpFn = std::function<Tensor(const Tensor&, std::span<const int>, const Tensor*,
                                     const Tensor&)>;
  explicit FunctionalDenoiser(Fn fn, VjpFn vjp = nullptr)
      : fn_(std::move(fn)), vjp_(std::move(vjp)) {}
  Tensor predict(const Tensor& z_t, std::span<const int> t, const Tensor* cond) const override {
    return fn_(z_t, t, cond);
  }
  Tensor backward_input(const Tensor& z_t, std::span<const int> t, const Tensor* cond,
                        const Tensor& gout) const override {
    if (!vjp_) return Denoiser::backward_input(z_t, t, cond, gout);
    return vjp_(z_t, t, cond, gout);
  }

 private:
  Fn fn_;
  VjpFn vjp_;
};

/// Mean squared noise-prediction error at one (t, eps) draw.
double denoiser_loss(const Denoiser& denoiser, const Tensor& z0, int t, const Tensor& eps,
                     const Tensor* cond, const NoiseSchedule& schedule);

/// Called after each reverse update with the current latent and the timestep
/// it now sits at (-1 once fully denoised). Used for inpainting blends.
using ReverseStepHook = std::function<void(Tensor& z, int t)>;

/// DDIM reverse sampling from timestep t_start down to 0 over an evenly
/// respaced subsequence of `steps` timesteps. eta = 0 is deterministic; the
/// rng is only consumed when eta > 0.
Tensor ddim_sample_range(const Denoiser& denoiser, const Tensor& z_start, int t_start, int steps,
                         double eta, const Tensor* cond, const NoiseSchedule& schedule, Rng& rng,
                         const ReverseStepHook& hook = nullptr);

/// Full reverse chain from z_T.
Tensor ddim_sample(const Denoiser& denoiser, const Tensor& z_T, int steps, double eta,
                   const Tensor* cond, const NoiseSchedule& schedule, Rng& rng);

/// The evenly spaced timestep subsequence used by ddim_sample_range,
/// descending from t_start. Exposed for tests.
std::vector<int> ddim_timesteps(int t_start, int steps);

}  // namespace latentshield
