#pragma once

#include <map>
#include <string>
#include <vector>

#include "latentshield/models.hpp"

namespace latentshield {

// ---------------------------------------------------------------------------
// Pairwise image metrics. Single-image tensors (n=1) unless noted.
// ---------------------------------------------------------------------------

/// Mean SSIM over channels, uniform 7x7 window, unbiased covariance,
/// stabilizers C1=(0.01)^2, C2=(0.03)^2 for [0,1] range.
double ssim(const Tensor& a, const Tensor& b);

/// 10*log10(1/MSE) for [0,1] images, capped at +99 dB for identical inputs.
double psnr(const Tensor& a, const Tensor& b);
constexpr double kPsnrCap = 99.0;

/// l2 distance between unit-normalized bundle features; range [0,2].
double feature_distance(const Tensor& a, const Tensor& b, const LdmBundle& bundle);

/// Cosine similarity of bundle features; range [-1,1].
double ia_score(const Tensor& a, const Tensor& b, const LdmBundle& bundle);

/// Same metrics over feature vectors directly (both (1,d,1,1) or flat).
double feature_distance_vec(const Tensor& fa, const Tensor& fb);
double cosine_vec(const Tensor& fa, const Tensor& fb);

/// Fraction of spectral power (DC excluded) above a radial frequency cutoff,
/// where 1.0 = Nyquist. Constant images score 0.
double high_frequency_energy(const Tensor& x, double cutoff = 0.25);

// ---------------------------------------------------------------------------
// Fréchet distance between Gaussian fits of feature sets (FID analog over
// toy-encoder features). Moments use the unbiased covariance estimator.
// ---------------------------------------------------------------------------

struct GaussianMoments {
  std::vector<double> mean;            // dim
  std::vector<double> cov;             // dim x dim, row-major
  int dim = 0;
};

GaussianMoments fit_moments(const Tensor& features);  // features: (n, d, 1, 1), n >= 2
double frechet_from_moments(const GaussianMoments& a, const GaussianMoments& b);
double frechet_from_features(const Tensor& fa, const Tensor& fb);
/// Encodes both image sets with the bundle; |A|,|B| >= min_count (default 32).
double frechet_feature_distance(const Tensor& images_a, const Tensor& images_b,
                                const LdmBundle& bundle, int min_count = 32);

// ---------------------------------------------------------------------------
// Purification defenses.
// ---------------------------------------------------------------------------

/// In-memory JPEG round-trip; quality in [1,100], default 65.
Tensor purify_jpeg(const Tensor& x, int quality = 65);

/// Center-crop keeping round(S*(1-crop_frac)) pixels per side, then bilinear
/// resize back to the original size (half-pixel convention; crop_frac=0 is an
/// exact identity).
Tensor purify_crop_resize(const Tensor& x, double crop_frac = 0.20);

struct SmoothParams {
  int radius = 2;
  double sigma_spatial = 1.5;
  double sigma_range = 0.1;
};

/// Edge-preserving bilateral filter (high-frequency noise remover).
Tensor purify_smooth(const Tensor& x, const SmoothParams& params = {});

// ---------------------------------------------------------------------------
// Report assembly.
// ---------------------------------------------------------------------------

/// Shared numeric formatting for all CSV emitters ("%.9g"), so reports stay
/// byte-stable across modules.
std::string csv_number(double v);

struct MetricRow {
  std::string image_id;
  std::string method;
  std::string metric;
  double strength = 0.0;  // edit strength; 0 for perturbation-quality rows
  double value = 0.0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;

  /// Deterministic CSV: fixed header/column order, fixed float formatting.
  std::string to_csv() const;
  /// Mean/count per (method, metric, strength) cell; flags cells under
  /// min_samples instead of dropping them.
  json summary(int min_samples = 1) const;
};

/// Inputs for one evaluation batch. All tensors are image batches aligned
/// with `ids`; `edited` maps method ("clean" for the unprotected baseline)
/// -> strength -> edited images.
struct EvalInputs {
  std::vector<std::string> ids;
  Tensor clean;
  std::map<std::string, Tensor> protected_images;                 // method -> batch
  std::map<std::string, std::map<double, Tensor>> edited;         // method -> strength -> batch
};

/// Perturbation-quality rows (ssim/psnr/feature_distance of protected vs
/// clean) plus protection rows (ia_score/feature_distance/psnr of each
/// method's edit vs the clean edit per strength, and a set-level
/// frechet_feature_distance row with image_id "__set__").
MetricsReport build_report(const EvalInputs& inputs, const LdmBundle& bundle,
                           const std::vector<std::string>& metric_set = {});

}  // namespace latentshield
