#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentshield/attacks.hpp"
#include "latentshield/models.hpp"

namespace latentshield {

// ---------------------------------------------------------------------------
// Latent budget amplification: how much a bounded pixel perturbation grows
// when measured in normalized latent units.
// ---------------------------------------------------------------------------

struct BudgetRatio {
  double delta_x = 0.0;  // l_inf pixel perturbation, dynamic range 1
  double delta_z = 0.0;  // l_inf normalized-latent perturbation
  double ratio = 0.0;    // delta_z / delta_x; meaningful only when defined
  bool defined = false;  // false when delta_x == 0
};

BudgetRatio budget_ratio(const Tensor& x, const Tensor& x_adv, const LdmBundle& bundle);

struct BudgetRatioRow {
  std::string image_id;
  int label = 0;  // sub-dataset index
  BudgetRatio r;
};

struct BudgetRatioReport {
  std::vector<BudgetRatioRow> rows;
  std::vector<double> hist_edges;              // size bins+1, shared across labels
  std::vector<std::vector<int>> hist_counts;   // [label][bin], defined rows only

  /// Median/mean of the defined ratios, per label and overall ("all").
  json summary() const;
  std::string rows_csv() const;       // image_id,label,delta_x,delta_z,ratio,defined
  std::string histogram_csv() const;  // label,bin_lo,bin_hi,count
};

/// labels pick the per-sub-dataset histograms; ids/labels sized like the
/// batches. Histogram bins are uniform over [0, max defined ratio].
BudgetRatioReport budget_ratio_report(const std::vector<std::string>& ids,
                                      const std::vector<int>& labels, const Tensor& clean,
                                      const Tensor& adv, const LdmBundle& bundle,
                                      int bins = 16);

// ---------------------------------------------------------------------------
// Round-trip reflection: does an edit of x mostly echo decode(encode(x))?
// ---------------------------------------------------------------------------

/// Per-image feature cosine between sdedit(x, strength, steps, seed) and the
/// plain reconstruction decode(encode(x)).
std::vector<double> roundtrip_reflection(const Tensor& x, const LdmBundle& bundle,
                                         double strength, int steps, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Denoiser robustness: attack the latent directly and see whether edits of
// the attacked latent still resemble edits of the clean one.
// ---------------------------------------------------------------------------

struct RobustnessRow {
  double budget = 0.0;      // normalized-latent l_inf budget handed to latent_pgd
  double loss_before = 0.0; // fixed-grid noise-prediction loss, clean latents
  double loss_after = 0.0;  // same grid, attacked latents
  double similarity = 1.0;  // mean feature cosine: edit(decode(z_adv)) vs edit(decode(z))
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::string csv() const;  // budget,loss_before,loss_after,similarity
};

RobustnessReport denoiser_robustness_probe(const Tensor& images, const LdmBundle& bundle,
                                           const std::vector<double>& budgets, int iters,
                                           double edit_strength, int edit_steps,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Gradient-estimator agreement: loss curves of the cheap estimator vs the
// full gradient, evaluated on a fixed (t, eps) grid each iteration.
// ---------------------------------------------------------------------------

struct LossCurvePair {
  std::vector<double> full;        // length iters+1: start plus each iterate
  std::vector<double> sds;         // same grid, same length
  double divergence = 0.0;         // max over iterations of |sds-full|/full
  double full_seconds_per_iter = 0.0;
  double sds_seconds_per_iter = 0.0;
  std::string csv() const;         // iter,loss_full,loss_sds
};

/// Runs base_cfg's attack loop twice -- exact gradient, then the shortcut
/// estimator -- feeding both the identical per-iteration draw sequence, and
/// scores every iterate on a fixed probe grid of len(fixed_timesteps) draws.
/// base_cfg must include a semantic term.
LossCurvePair loss_curve_compare(const Tensor& x, const LdmBundle& bundle,
                                 const AttackConfig& base_cfg,
                                 const std::vector<int>& fixed_timesteps,
                                 std::uint64_t probe_seed);

// ---------------------------------------------------------------------------
// Cross-model transfer of a protection.
// ---------------------------------------------------------------------------

struct TransferProbeResult {
  std::vector<double> native_scores;    // per image, under the source bundle
  std::vector<double> transfer_scores;  // per image, under the target bundle
  double native_mean = 0.0;
  double transfer_mean = 0.0;
};

/// Protection score under a bundle M = 1 - feature-cosine(sdedit_M(x_adv),
/// sdedit_M(x)), features taken from M itself. Bundles must share the image
/// resolution.
TransferProbeResult transfer_probe(const Tensor& x, const Tensor& x_adv,
                                   const LdmBundle& source, const LdmBundle& target,
                                   double strength, int steps, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pixel-space diffusion model: the same attack recipe applied without an
// encoder, expected to leave edits nearly unchanged.
// ---------------------------------------------------------------------------

struct PixelProbeReport {
  double delta = 0.0;
  int iters = 0;
  /// Mean feature cosine between edits of attacked and clean images; exactly
  /// 1 at delta = 0.
  double similarity = 1.0;
  /// Mean feature cosine between an edit and the original clean image, i.e.
  /// how much source content the edit preserves (clean_preservation uses the
  /// clean edit, attacked_preservation the edit of the attacked image).
  double clean_preservation = 0.0;
  double attacked_preservation = 0.0;
  std::string csv() const;
};

/// Noise-prediction-ascent PGD directly on the pixel-space model (images
/// shifted to [-1,1] inside), then an edit-by-partial-noising pass; features
/// for scoring come from feature_bundle.
PixelProbeReport pixel_dm_attack_probe(const Tensor& images, const PixelDmBundle& pixel,
                                       const LdmBundle& feature_bundle, double delta,
                                       int iters, double edit_strength, int edit_steps,
                                       std::uint64_t seed);

/// The attack half of the probe, exposed for tests: sign-PGD ascent on the
/// pixel model's noise-prediction loss within ||x'-x||_inf <= delta ∩ [0,1].
Tensor pixel_advdm(const Tensor& x, const PixelDmBundle& pixel, double delta, double step,
                   int iters, std::uint64_t seed);

/// Edit-by-partial-noising on the pixel model (no encoder): shift to [-1,1],
/// forward-noise to round(strength*T), reverse-sample, shift back.
Tensor pixel_sdedit(const Tensor& x, const PixelDmBundle& pixel, double strength, int steps,
                    std::uint64_t seed);

}  // namespace latentshield
