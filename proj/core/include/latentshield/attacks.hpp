#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latentshield/models.hpp"

namespace latentshield {

enum class AttackDirection { ascent, descent };

std::string to_string(AttackDirection d);
AttackDirection direction_from_string(const std::string& s);

/// PGD attack setup. The seven named methods fix (use_sds, direction, active
/// losses); validate() rejects configs that contradict their method's row.
struct AttackConfig {
  std::string method;             // advdm, advdm_minus, photoguard, mist,
                                  // sds_plus, sds_minus, sdst
  double budget = 16.0 / 255.0;   // l_inf radius, pixel units
  double step = 1.0 / 255.0;      // per-iteration step size
  int iters = 100;
  double textural_weight = 5.0;   // lambda for the textural gradient term
  bool use_semantic = true;
  bool use_textural = false;
  bool use_sds = false;
  AttackDirection direction = AttackDirection::ascent;
  int mc_samples = 1;             // gradient draws averaged before the sign
  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static AttackConfig from_json(const json& j);
};

/// Canonical config for one of the seven named methods.
AttackConfig make_method(const std::string& name);
const std::vector<std::string>& method_names();

struct ProtectionResult {
  Tensor x_adv;
  Tensor delta;  // x_adv - x
  std::vector<double> semantic_trace;  // per-iteration losses (when active)
  std::vector<double> textural_trace;
  double grad_seconds_per_iter = 0.0;   // wall clock; excluded from the
                                        // deterministic-output contract
  long long peak_workspace_bytes = 0;   // max activation-cache bytes per
                                        // gradient evaluation
};

// ---------------------------------------------------------------------------
// Losses. Both are means over elements, so their gradients share a scale.
// ---------------------------------------------------------------------------

/// Noise-prediction error of the bundle's denoiser at the encoding of x:
/// mean((eps_theta(q_sample(normalize(E(x)), t, eps), t, cond) - eps)^2).
/// Rejects bundles whose meta lacks trained=true.
double semantic_loss(const Tensor& x, const LdmBundle& bundle, int t, const Tensor& eps,
                     const Tensor* cond = nullptr);

/// Same composition with an explicit denoiser (for analytic test denoisers);
/// skips the trained-bundle check.
double semantic_loss_with(const Tensor& x, const LdmBundle& bundle, const Denoiser& denoiser,
                          int t, const Tensor& eps, const Tensor* cond = nullptr);

/// -mean((E(x) - E(y))^2): maximizing pulls the latent of x toward y's.
/// A batch-1 target y is applied to every sample of a batched x.
double textural_loss(const Tensor& x, const Tensor& y, const LdmBundle& bundle);

// ---------------------------------------------------------------------------
// Gradients w.r.t. x.
// ---------------------------------------------------------------------------

/// Exact reverse-mode gradient through denoiser and encoder.
Tensor full_semantic_gradient(const Tensor& x, const LdmBundle& bundle, int t,
                              const Tensor& eps, const Tensor* cond = nullptr,
                              double* loss_out = nullptr);

/// Score-distillation shortcut: the residual (eps_theta - eps) is pushed
/// through d z_t / d x only; the denoiser runs inference-only and retains no
/// gradient state. With a mean-squared loss this returns exactly half of
/// full_semantic_gradient whenever the denoiser Jacobian is the identity
/// (the full gradient's Jacobian term contributes the other half).
Tensor sds_gradient(const Tensor& x, const LdmBundle& bundle, int t, const Tensor& eps,
                    const Tensor* cond = nullptr, double* loss_out = nullptr);

/// Gradient of textural_loss (same batch-1 target broadcast).
Tensor textural_gradient(const Tensor& x, const Tensor& y, const LdmBundle& bundle,
                         double* loss_out = nullptr);

// Explicit-denoiser variants; the full path uses Denoiser::backward_input
// (and so works for analytic denoisers with hand-coded Jacobians). They skip
// the trained-bundle check.
Tensor full_semantic_gradient_with(const Tensor& x, const LdmBundle& bundle,
                                   const Denoiser& denoiser, int t, const Tensor& eps,
                                   const Tensor* cond = nullptr, double* loss_out = nullptr);
Tensor sds_gradient_with(const Tensor& x, const LdmBundle& bundle, const Denoiser& denoiser,
                         int t, const Tensor& eps, const Tensor* cond = nullptr,
                         double* loss_out = nullptr);

// ---------------------------------------------------------------------------
// PGD loops.
// ---------------------------------------------------------------------------

/// Observer invoked after each projected step with the iteration index (from
/// 0) and the current iterate.
using PgdIterHook = std::function<void(int iter, const Tensor& x_adv)>;

/// Projected sign-gradient ascent/descent inside the l_inf ball of radius
/// cfg.budget around x, intersected with [0,1]. target supplies y for the
/// textural term; when null, a bundled periodic high-contrast texture is
/// used. Deterministic given (x, bundle, cfg, target).
ProtectionResult pgd_protect(const Tensor& x, const LdmBundle& bundle, const AttackConfig& cfg,
                             const Tensor* target = nullptr,
                             const PgdIterHook& hook = nullptr);

/// PGD ascent on the denoiser loss directly in latent space. z is a raw
/// encoder latent; the budget/step are in normalized latent units and the
/// projection is applied there. Returns the attacked raw latent.
Tensor latent_pgd(const Tensor& z, const LdmBundle& bundle, double budget, double step,
                  int iters, std::uint64_t seed);

/// Bundled default target for textural methods: a periodic high-contrast
/// pattern (period 4 px, per-channel phase offsets).
Tensor default_target_texture(int size, int channels);

}  // namespace latentshield
