#include <doctest.h>

#include <cmath>

#include "latentshield/metrics.hpp"
#include "test_support.hpp"

using namespace latentshield;
using namespace latentshield::testing;

namespace {

/// Independent SSIM: mean over all 7x7 valid windows per channel, sample
/// covariance with the n/(n-1) correction, written as a direct two-pass loop.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const int win = 7;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (int c = 0; c < a.c(); ++c) {
    for (int y0 = 0; y0 + win <= a.h(); ++y0) {
      for (int x0 = 0; x0 + win <= a.w(); ++x0) {
        double ma = 0, mb = 0;
        for (int y = y0; y < y0 + win; ++y)
          for (int x = x0; x < x0 + win; ++x) {
            ma += a.at(0, c, y, x);
            mb += b.at(0, c, y, x);
          }
        ma /= win * win;
        mb /= win * win;
        double va = 0, vb = 0, cab = 0;
        for (int y = y0; y < y0 + win; ++y)
          for (int x = x0; x < x0 + win; ++x) {
            const double da = a.at(0, c, y, x) - ma;
            const double db = b.at(0, c, y, x) - mb;
            va += da * da;
            vb += db * db;
            cab += da * db;
          }
        va /= win * win - 1;
        vb /= win * win - 1;
        cab /= win * win - 1;
        total += ((2 * ma * mb + c1) * (2 * cab + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("ssim matches an independent implementation on random pairs") {
  Rng rng(301);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = random_images(1, 3, 12, 400 + trial);
    Tensor b = a;
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] += 0.05 * rng.normal();
    b.clamp(0.0, 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("ssim hand values") {
  Tensor a(1, 1, 8, 8), b(1, 1, 8, 8);
  a.fill(0.25);
  b.fill(0.25);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  // Constant images: variance terms vanish, so
  // ssim = (2*ma*mb + c1) / (ma^2 + mb^2 + c1).
  b.fill(0.75);
  const double expect = (2 * 0.25 * 0.75 + 1e-4) / (0.25 * 0.25 + 0.75 * 0.75 + 1e-4);
  CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));
  Tensor small(1, 1, 6, 6);
  CHECK_THROWS_AS(ssim(small, small), std::invalid_argument);
}

TEST_CASE("psnr hand values") {
  Tensor a(1, 1, 4, 4), b(1, 1, 4, 4);
  a.fill(0.5);
  b.fill(0.6);  // mse = 0.01 -> 20 dB
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(psnr(a, a) == kPsnrCap);
  b.fill(1.5);  // mse = 1 -> 0 dB
  CHECK(psnr(a, b) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("feature vector metrics") {
  Tensor fa(1, 3, 1, 1), fb(1, 3, 1, 1);
  fa[0] = 1;
  fb[1] = 2;  // orthogonal
  CHECK(cosine_vec(fa, fb) == doctest::Approx(0.0));
  CHECK(feature_distance_vec(fa, fb) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cosine_vec(fa, fa) == doctest::Approx(1.0));
  CHECK(feature_distance_vec(fa, fa) == 0.0);
  Tensor neg = fa;
  neg.scale(-3.0);  // cosine is scale-invariant
  CHECK(cosine_vec(fa, neg) == doctest::Approx(-1.0));
  CHECK(feature_distance_vec(fa, neg) == doctest::Approx(2.0).epsilon(1e-12));
  Tensor zero(1, 3, 1, 1);
  CHECK(cosine_vec(fa, zero) == 0.0);
  CHECK(feature_distance_vec(zero, zero) == 0.0);
}

TEST_CASE("high-frequency energy ordering") {
  const int S = 16;
  Tensor flat(1, 1, S, S);
  flat.fill(0.5);
  CHECK(high_frequency_energy(flat) == 0.0);

  // Slowly varying gradient: almost all energy below the cutoff.
  Tensor smooth(1, 1, S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) smooth.at(0, 0, y, x) = 0.5 + 0.4 * std::sin(2 * M_PI * x / S);
  // Checkerboard: all energy at Nyquist.
  Tensor checker(1, 1, S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) checker.at(0, 0, y, x) = ((x + y) % 2) ? 1.0 : 0.0;

  const double lo = high_frequency_energy(smooth);
  const double hi = high_frequency_energy(checker);
  CHECK(lo < 0.05);
  CHECK(hi > 0.95);
  CHECK(high_frequency_energy(checker, 1.9) == doctest::Approx(0.0));  // cutoff beyond nyquist
}

TEST_CASE("frechet distance on diagonal gaussians matches the closed form") {
  // With commuting (diagonal) covariances:
  //   d^2 = |mu1-mu2|^2 + sum_i (sqrt(v1_i) - sqrt(v2_i))^2.
  GaussianMoments a, b;
  a.dim = b.dim = 3;
  a.mean = {0.0, 1.0, -2.0};
  b.mean = {0.5, 1.0, -1.0};
  a.cov = {0.5, 0, 0, 0, 1.0, 0, 0, 0, 2.0};
  b.cov = {1.5, 0, 0, 0, 1.0, 0, 0, 0, 0.5};
  double expect = 0.25 + 0.0 + 1.0;
  const double pairs[3][2] = {{0.5, 1.5}, {1.0, 1.0}, {2.0, 0.5}};
  for (const auto& p : pairs) {
    const double d = std::sqrt(p[0]) - std::sqrt(p[1]);
    expect += d * d;
  }
  CHECK(frechet_from_moments(a, b) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(frechet_from_moments(a, a) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(frechet_from_moments(b, a) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("fit_moments recovers sample statistics") {
  Tensor f(4, 2, 1, 1);
  // Column 0: {1,2,3,4}; column 1: {0,0,2,2}.
  const double col0[4] = {1, 2, 3, 4};
  const double col1[4] = {0, 0, 2, 2};
  for (int i = 0; i < 4; ++i) {
    f.at(i, 0, 0, 0) = col0[i];
    f.at(i, 1, 0, 0) = col1[i];
  }
  const GaussianMoments m = fit_moments(f);
  CHECK(m.mean[0] == doctest::Approx(2.5));
  CHECK(m.mean[1] == doctest::Approx(1.0));
  // Unbiased: var0 = (2.25+0.25+0.25+2.25)/3, cov01 = ((-1.5)(-1)+(-0.5)(-1)+0.5+1.5)/3.
  CHECK(m.cov[0] == doctest::Approx(5.0 / 3.0));
  CHECK(m.cov[3] == doctest::Approx(4.0 / 3.0));
  CHECK(m.cov[1] == doctest::Approx(4.0 / 3.0));
  CHECK(m.cov[1] == m.cov[2]);
  Tensor one(1, 2, 1, 1);
  CHECK_THROWS_AS(fit_moments(one), std::invalid_argument);
}

TEST_CASE("frechet of separated clusters exceeds within-cluster value") {
  Rng rng(77);
  Tensor fa(40, 3, 1, 1), fb(40, 3, 1, 1), fc(40, 3, 1, 1);
  rng.fill_normal(fa);
  rng.fill_normal(fb);
  rng.fill_normal(fc);
  for (int i = 0; i < 40; ++i) fc.at(i, 0, 0, 0) += 5.0;  // shifted cluster
  const double near = frechet_from_features(fa, fb);
  const double far = frechet_from_features(fa, fc);
  CHECK(far > near + 10.0);
}

TEST_CASE("jpeg purification keeps structure but damps pixel noise") {
  Rng rng(88);
  Tensor x = random_images(1, 3, 16, 501);
  // Smooth base image: horizontal ramp.
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int xx = 0; xx < 16; ++xx) x.at(0, c, y, xx) = 0.2 + 0.6 * xx / 15.0;
  Tensor noisy = x;
  for (std::size_t i = 0; i < noisy.numel(); ++i) noisy[i] += 0.08 * rng.normal();
  noisy.clamp(0.0, 1.0);

  const Tensor pure = purify_jpeg(noisy, 65);
  REQUIRE(pure.same_shape(x));
  CHECK(rmse(pure, x) < rmse(noisy, x));  // moves back toward the smooth image
  CHECK(high_frequency_energy(pure) < high_frequency_energy(noisy));
  CHECK_THROWS_AS(purify_jpeg(x, 0), std::invalid_argument);
  CHECK_THROWS_AS(purify_jpeg(x, 101), std::invalid_argument);
}

TEST_CASE("crop-resize purification") {
  Tensor x = random_images(2, 3, 16, 502);
  CHECK(rmse(purify_crop_resize(x, 0.0), x) == 0.0);  // exact identity
  const Tensor pure = purify_crop_resize(x, 0.20);
  REQUIRE(pure.same_shape(x));
  CHECK(rmse(pure, x) > 1e-6);  // genuinely resampled
  // Constant images are a fixed point regardless of crop.
  Tensor flat(1, 1, 16, 16);
  flat.fill(0.3);
  CHECK(rmse(purify_crop_resize(flat, 0.20), flat) < 1e-12);
  CHECK_THROWS_AS(purify_crop_resize(x, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(purify_crop_resize(x, -0.1), std::invalid_argument);
}

TEST_CASE("bilateral smoothing removes speckle and keeps edges") {
  // Step edge with one speckled pixel per side.
  Tensor x(1, 1, 12, 12);
  for (int y = 0; y < 12; ++y)
    for (int xx = 0; xx < 12; ++xx) x.at(0, 0, y, xx) = xx < 6 ? 0.2 : 0.8;
  Tensor noisy = x;
  noisy.at(0, 0, 3, 2) = 0.26;  // small-amplitude noise is averaged out
  noisy.at(0, 0, 8, 9) = 0.74;

  const Tensor pure = purify_smooth(noisy);
  CHECK(std::abs(pure.at(0, 0, 3, 2) - 0.2) < std::abs(noisy.at(0, 0, 3, 2) - 0.2));
  // The edge survives: cross-edge contrast stays near the original step.
  CHECK(pure.at(0, 0, 6, 4) < 0.3);
  CHECK(pure.at(0, 0, 6, 7) > 0.7);
  SmoothParams bad;
  bad.radius = 0;
  CHECK_THROWS_AS(purify_smooth(x, bad), std::invalid_argument);
}

TEST_CASE("metrics report csv is byte-stable with pinned formatting") {
  MetricsReport rep;
  rep.rows.push_back({"img_00000", "advdm", "ssim", 0.0, 0.123456789123});
  rep.rows.push_back({"img_00001", "clean", "psnr", 0.3, 99.0});
  rep.rows.push_back({"__set__", "mist", "frechet_feature_distance", 0.2, 1e-7});
  const std::string expect =
      "image_id,method,metric,strength,value\n"
      "img_00000,advdm,ssim,0,0.123456789\n"
      "img_00001,clean,psnr,0.3,99\n"
      "__set__,mist,frechet_feature_distance,0.2,1e-07\n";
  CHECK(rep.to_csv() == expect);
  CHECK(rep.to_csv() == rep.to_csv());
}

TEST_CASE("report summary aggregates per cell and flags thin cells") {
  MetricsReport rep;
  rep.rows.push_back({"a", "advdm", "ia_score", 0.3, 0.8});
  rep.rows.push_back({"b", "advdm", "ia_score", 0.3, 0.6});
  rep.rows.push_back({"a", "advdm", "ia_score", 0.2, 0.9});
  const json s = rep.summary(2);
  REQUIRE(s.size() == 2);
  bool saw_03 = false, saw_02 = false;
  for (const auto& cell : s) {
    if (cell["strength"].get<double>() == 0.3) {
      saw_03 = true;
      CHECK(cell["mean"].get<double>() == doctest::Approx(0.7));
      CHECK(cell["count"] == 2);
      CHECK(cell["underfilled"] == false);
    } else {
      saw_02 = true;
      CHECK(cell["count"] == 1);
      CHECK(cell["underfilled"] == true);
    }
  }
  CHECK(saw_03);
  CHECK(saw_02);
}

TEST_CASE("build_report produces perturbation and protection rows") {
  const LdmBundle bundle = tiny_trained_bundle(61);
  const int n = 40;  // above the frechet min_count
  EvalInputs in;
  in.clean = random_images(n, 3, 8, 600);
  for (int i = 0; i < n; ++i) in.ids.push_back("img_" + std::to_string(i));
  Tensor adv = in.clean;
  Rng rng(601);
  for (std::size_t i = 0; i < adv.numel(); ++i) adv[i] += 0.03 * rng.normal();
  adv.clamp(0.0, 1.0);
  in.protected_images["advdm"] = adv;

  // "Edited" batches: clean edit = blur-ish shift, advdm edit = different.
  Tensor clean_edit = in.clean;
  clean_edit.scale(0.9);
  Tensor adv_edit = adv;
  adv_edit.scale(0.8);
  in.edited["clean"][0.3] = clean_edit;
  in.edited["advdm"][0.3] = adv_edit;

  const MetricsReport rep = build_report(in, bundle);
  int perturb_rows = 0, protect_rows = 0, set_rows = 0;
  for (const MetricRow& r : rep.rows) {
    CHECK(r.method == "advdm");  // clean is the baseline, never a row of its own
    if (r.strength == 0.0) {
      ++perturb_rows;
    } else {
      CHECK(r.strength == 0.3);
      if (r.image_id == "__set__") {
        ++set_rows;
        CHECK(r.metric == "frechet_feature_distance");
      } else {
        ++protect_rows;
      }
    }
  }
  CHECK(perturb_rows == 3 * n);      // ssim/psnr/feature_distance per image
  CHECK(set_rows == 1);              // one set-level row per (method, strength)
  CHECK(protect_rows == 3 * n);      // ia_score/feature_distance/psnr per image

  // Identical edits would score as the fixed points: check via a second
  // report where the "attack" changed nothing.
  EvalInputs fixed = in;
  fixed.edited["advdm"][0.3] = clean_edit;
  const MetricsReport rep2 = build_report(fixed, bundle);
  for (const MetricRow& r : rep2.rows) {
    if (r.metric == "ia_score") CHECK(r.value == doctest::Approx(1.0));
    if (r.metric == "psnr" && r.strength == 0.3) CHECK(r.value == kPsnrCap);
    if (r.metric == "frechet_feature_distance") CHECK(r.value <= 1e-9);
  }
}

TEST_CASE("build_report validates its inputs") {
  const LdmBundle bundle = tiny_trained_bundle(62);
  EvalInputs in;
  in.clean = random_images(2, 3, 8, 603);
  in.ids = {"a", "b"};
  Tensor adv = in.clean;
  in.protected_images["advdm"] = adv;
  in.edited["advdm"][0.3] = adv;  // no clean edit at 0.3 -> error
  CHECK_THROWS_AS(build_report(in, bundle), std::invalid_argument);
}

TEST_CASE("metric_set filters the computed metrics") {
  const LdmBundle bundle = tiny_trained_bundle(63);
  EvalInputs in;
  const int n = 4;
  in.clean = random_images(n, 3, 8, 604);
  for (int i = 0; i < n; ++i) in.ids.push_back("img_" + std::to_string(i));
  in.protected_images["advdm"] = in.clean;
  const MetricsReport rep = build_report(in, bundle, {"ssim"});
  for (const MetricRow& r : rep.rows) CHECK(r.metric == "ssim");
  CHECK(rep.rows.size() == n);
}

TEST_SUITE_END();
