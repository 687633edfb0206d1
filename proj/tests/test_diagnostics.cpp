#include <doctest.h>

#include <algorithm>

#include "latentshield/diagnostics.hpp"
#include "latentshield/metrics.hpp"
#include "test_support.hpp"

using namespace latentshield;
using namespace latentshield::testing;

namespace {

PixelDmBundle tiny_pixel_bundle(std::uint64_t seed = 21) {
  PixelDmBundle p;
  p.arch = tiny_dn_arch();
  p.arch.data_channels = 3;
  p.denoiser = DenoiserNet(p.arch);
  Rng rng(seed);
  p.denoiser.init(rng);
  for (auto& [name, t] : p.denoiser.param_list()) {
    for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] += 0.05 * rng.normal();
  }
  p.schedule = make_schedule(50, 1e-4, 0.05, ScheduleKind::linear);
  p.meta = {{"trained", true}};
  return p;
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("diagnostics");

TEST_CASE("budget ratio matches per-image hand computation") {
  const LdmBundle b = tiny_trained_bundle(30);
  const Tensor x = random_images(3, 3, 8, 300);
  Tensor adv = x;
  // Image 0: known bump. Image 1: untouched. Image 2: different bump.
  adv.at(0, 1, 2, 3) += 0.04;
  adv.at(2, 0, 5, 5) -= 0.07;
  adv.at(2, 2, 1, 6) += 0.02;

  const std::vector<std::string> ids = {"a", "b", "c"};
  const std::vector<int> labels = {0, 2, 0};
  const BudgetRatioReport rep = budget_ratio_report(ids, labels, x, adv, b, 4);
  REQUIRE(rep.rows.size() == 3);

  const Tensor za = b.encode_normalized(x);
  const Tensor zb = b.encode_normalized(adv);
  for (int i = 0; i < 3; ++i) {
    CHECK(rep.rows[i].image_id == ids[i]);
    CHECK(rep.rows[i].label == labels[i]);
    CHECK(rep.rows[i].r.delta_x == linf_distance(x.slice_sample(i), adv.slice_sample(i)));
    CHECK(rep.rows[i].r.delta_z == linf_distance(za.slice_sample(i), zb.slice_sample(i)));
  }
  CHECK(rep.rows[0].r.defined);
  CHECK(!rep.rows[1].r.defined);
  CHECK(rep.rows[1].r.ratio == 0.0);
  CHECK(rep.rows[2].r.defined);
  CHECK(rep.rows[0].r.ratio ==
        doctest::Approx(rep.rows[0].r.delta_z / rep.rows[0].r.delta_x));

  // The standalone helper agrees with the batch rows on a single image.
  const BudgetRatio single = budget_ratio(x.slice_sample(0), adv.slice_sample(0), b);
  CHECK(single.ratio == doctest::Approx(rep.rows[0].r.ratio).epsilon(1e-12));
  CHECK_THROWS_AS(budget_ratio(x, Tensor(3, 3, 4, 4), b), std::invalid_argument);
}

TEST_CASE("budget ratio histogram spans the defined ratios") {
  const LdmBundle b = tiny_trained_bundle(31);
  const Tensor x = random_images(6, 3, 8, 301);
  Tensor adv = x;
  Rng rng(302);
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    adv[i] = std::clamp(adv[i] + rng.uniform(-0.03, 0.03), 0.0, 1.0);
  }
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    ids.push_back("img_" + std::to_string(i));
    labels.push_back(i % 2);
  }
  const int bins = 5;
  const BudgetRatioReport rep = budget_ratio_report(ids, labels, x, adv, b, bins);

  REQUIRE(rep.hist_edges.size() == bins + 1);
  CHECK(rep.hist_edges.front() == 0.0);
  double hi = 0.0;
  int defined = 0;
  for (const auto& row : rep.rows) {
    if (row.r.defined) {
      hi = std::max(hi, row.r.ratio);
      ++defined;
    }
  }
  CHECK(rep.hist_edges.back() == doctest::Approx(hi).epsilon(1e-12));
  REQUIRE(rep.hist_counts.size() == 2);  // labels 0 and 1
  int total = 0;
  for (const auto& per_label : rep.hist_counts) {
    REQUIRE(per_label.size() == bins);
    for (int c : per_label) total += c;
  }
  CHECK(total == defined);

  // The summary partitions rows the same way.
  const json s = rep.summary();
  CHECK(s["all"]["count"] == defined);
  CHECK(int(s["label_0"]["count"]) + int(s["label_1"]["count"]) == defined);

  // CSV: header + one line per row / per (label, bin).
  CHECK(count_lines(rep.rows_csv()) == 7);
  CHECK(count_lines(rep.histogram_csv()) == 1 + 2 * bins);
  CHECK(rep.rows_csv().rfind("image_id,label,delta_x,delta_z,ratio,defined\n", 0) == 0);
  CHECK(rep.histogram_csv().rfind("label,bin_lo,bin_hi,count\n", 0) == 0);
}

TEST_CASE("budget ratio summary medians are exact on crafted rows") {
  BudgetRatioReport rep;
  auto add = [&](int label, double ratio, bool defined) {
    BudgetRatioRow row;
    row.image_id = "x";
    row.label = label;
    row.r.ratio = ratio;
    row.r.defined = defined;
    row.r.delta_x = defined ? 1.0 : 0.0;
    row.r.delta_z = ratio;
    rep.rows.push_back(row);
  };
  add(0, 1.0, true);
  add(0, 3.0, true);
  add(0, 10.0, true);
  add(1, 2.0, true);
  add(1, 4.0, true);
  add(1, 0.0, false);

  const json s = rep.summary();
  CHECK(s["all"]["count"] == 5);
  CHECK(s["all"]["undefined"] == 1);
  CHECK(double(s["all"]["median"]) == 3.0);
  CHECK(double(s["all"]["mean"]) == doctest::Approx(4.0));
  CHECK(double(s["label_0"]["median"]) == 3.0);
  CHECK(double(s["label_1"]["median"]) == 3.0);  // even count: midpoint of 2,4
  CHECK(s["label_1"]["undefined"] == 1);
}

TEST_CASE("budget ratio report validates its inputs") {
  const LdmBundle b = tiny_trained_bundle(32);
  const Tensor x = random_images(2, 3, 8, 303);
  CHECK_THROWS_AS(budget_ratio_report({"a"}, {0, 0}, x, x, b, 4), std::invalid_argument);
  CHECK_THROWS_AS(budget_ratio_report({"a", "b"}, {0}, x, x, b, 4), std::invalid_argument);
  CHECK_THROWS_AS(budget_ratio_report({"a", "b"}, {0, -1}, x, x, b, 4), std::invalid_argument);
  CHECK_THROWS_AS(budget_ratio_report({"a", "b"}, {0, 0}, x, x, b, 0), std::invalid_argument);
}

TEST_CASE("roundtrip reflection yields one cosine per image") {
  const LdmBundle b = tiny_trained_bundle(33);
  const Tensor x = random_images(3, 3, 8, 304);
  const std::vector<double> r1 = roundtrip_reflection(x, b, 0.3, 6, 9);
  REQUIRE(r1.size() == 3);
  for (double v : r1) {
    CHECK(v <= 1.0 + 1e-12);
    CHECK(v >= -1.0 - 1e-12);
  }
  CHECK(roundtrip_reflection(x, b, 0.3, 6, 9) == r1);
}

TEST_CASE("robustness probe at budget zero is a perfect echo") {
  const LdmBundle b = tiny_trained_bundle(34);
  const Tensor x = random_images(2, 3, 8, 305);
  const RobustnessReport rep = denoiser_robustness_probe(x, b, {0.0, 0.5}, 8, 0.3, 6, 17);
  REQUIRE(rep.rows.size() == 2);

  const RobustnessRow& zero = rep.rows[0];
  CHECK(zero.budget == 0.0);
  CHECK(zero.loss_after == zero.loss_before);  // identical latents, same grid
  CHECK(zero.similarity == doctest::Approx(1.0).epsilon(1e-12));

  const RobustnessRow& half = rep.rows[1];
  CHECK(half.budget == 0.5);
  CHECK(half.loss_after != half.loss_before);
  CHECK(half.similarity < 1.0);
  CHECK(std::isfinite(half.similarity));

  const std::string csv = rep.csv();
  CHECK(csv.rfind("budget,loss_before,loss_after,similarity\n", 0) == 0);
  CHECK(count_lines(csv) == 3);
}

TEST_CASE("loss curves score both estimators on the same probe grid") {
  const LdmBundle b = tiny_trained_bundle(35);
  const Tensor x = random_images(1, 3, 8, 306);
  AttackConfig cfg = make_method("advdm");
  cfg.iters = 5;
  cfg.budget = 0.05;
  cfg.step = 0.01;
  cfg.seed = 2;

  const LossCurvePair pair = loss_curve_compare(x, b, cfg, {5, 20, 40}, 77);
  REQUIRE(pair.full.size() == 6);  // start + one per iteration
  REQUIRE(pair.sds.size() == 6);
  CHECK(pair.full[0] == pair.sds[0]);  // both trajectories start at x
  CHECK(pair.divergence >= 0.0);
  for (double v : pair.full) CHECK(std::isfinite(v));
  for (double v : pair.sds) CHECK(std::isfinite(v));
  CHECK(pair.full_seconds_per_iter > 0.0);
  CHECK(pair.sds_seconds_per_iter > 0.0);

  const std::string csv = pair.csv();
  CHECK(csv.rfind("iter,loss_full,loss_sds\n", 0) == 0);
  CHECK(count_lines(csv) == 7);

  CHECK_THROWS_AS(loss_curve_compare(x, b, cfg, {}, 77), std::invalid_argument);
}

TEST_CASE("transfer probe scores are identical when target equals source") {
  const LdmBundle b = tiny_trained_bundle(36);
  const Tensor x = random_images(2, 3, 8, 307);
  Tensor adv = x;
  Rng rng(308);
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    adv[i] = std::clamp(adv[i] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  }
  const TransferProbeResult res = transfer_probe(x, adv, b, b, 0.3, 6, 5);
  REQUIRE(res.native_scores.size() == 2);
  CHECK(res.native_scores == res.transfer_scores);
  CHECK(res.native_mean == res.transfer_mean);
  for (double s : res.native_scores) {
    CHECK(s >= 0.0);
    CHECK(s <= 2.0);
  }

  // A different bundle at the same resolution gives different scores.
  const LdmBundle other = tiny_trained_bundle(37);
  const TransferProbeResult cross = transfer_probe(x, adv, b, other, 0.3, 6, 5);
  CHECK(cross.native_mean == res.native_mean);
  CHECK(cross.transfer_mean != cross.native_mean);

  CHECK_THROWS_AS(transfer_probe(x, Tensor(2, 3, 4, 4), b, b, 0.3, 6, 5),
                  std::invalid_argument);
  LdmBundle big = tiny_trained_bundle(38);
  big.ae_arch.image_size = 16;
  CHECK_THROWS_AS(transfer_probe(x, adv, b, big, 0.3, 6, 5), std::invalid_argument);
}

TEST_CASE("pixel attack respects budget, range and trivial cases") {
  const PixelDmBundle p = tiny_pixel_bundle(39);
  const Tensor x = random_images(2, 3, 8, 309);

  CHECK(rmse(pixel_advdm(x, p, 0.0, 1.0 / 255, 10, 1), x) == 0.0);
  CHECK(rmse(pixel_advdm(x, p, 0.05, 1.0 / 255, 0, 1), x) == 0.0);
  CHECK_THROWS_AS(pixel_advdm(x, p, -0.1, 1.0 / 255, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(pixel_advdm(x, p, 0.05, 0.0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(pixel_advdm(x, p, 0.05, 1.0 / 255, -1, 1), std::invalid_argument);

  PixelDmBundle untrained = p;
  untrained.meta["trained"] = false;
  CHECK_THROWS_AS(pixel_advdm(x, untrained, 0.05, 1.0 / 255, 5, 1), std::invalid_argument);

  const double delta = 0.03;
  const Tensor adv = pixel_advdm(x, p, delta, 0.01, 12, 4);
  CHECK(linf_distance(adv, x) <= delta + 1e-12);
  CHECK(linf_distance(adv, x) > 0.0);
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    CHECK(adv[i] >= 0.0);
    CHECK(adv[i] <= 1.0);
  }
  CHECK(rmse(pixel_advdm(x, p, delta, 0.01, 12, 4), adv) == 0.0);
}

TEST_CASE("pixel edit validates, stays in range and is deterministic") {
  const PixelDmBundle p = tiny_pixel_bundle(40);
  const Tensor x = random_images(2, 3, 8, 310);
  CHECK_THROWS_AS(pixel_sdedit(x, p, 0.0, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(pixel_sdedit(x, p, 1.0001, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(pixel_sdedit(x, p, 0.3, 0, 1), std::invalid_argument);

  const Tensor e = pixel_sdedit(x, p, 0.3, 5, 1);
  CHECK(e.same_shape(x));
  for (std::size_t i = 0; i < e.numel(); ++i) {
    CHECK(e[i] >= 0.0);
    CHECK(e[i] <= 1.0);
  }
  CHECK(rmse(pixel_sdedit(x, p, 0.3, 5, 1), e) == 0.0);
  CHECK(rmse(pixel_sdedit(x, p, 0.3, 5, 2), e) > 0.0);
}

TEST_CASE("pixel probe reduces to an exact echo at delta zero") {
  const PixelDmBundle p = tiny_pixel_bundle(41);
  const LdmBundle feat = tiny_trained_bundle(42);
  const Tensor x = random_images(3, 3, 8, 311);

  const PixelProbeReport rep = pixel_dm_attack_probe(x, p, feat, 0.0, 10, 0.3, 5, 6);
  CHECK(rep.delta == 0.0);
  CHECK(rep.iters == 10);
  CHECK(rep.similarity == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.attacked_preservation == doctest::Approx(rep.clean_preservation).epsilon(1e-12));
  CHECK(count_lines(rep.csv()) == 2);
  CHECK(rep.csv().rfind("delta,iters,similarity,clean_preservation,attacked_preservation\n",
                        0) == 0);

  const PixelProbeReport hit = pixel_dm_attack_probe(x, p, feat, 16.0 / 255, 10, 0.3, 5, 6);
  CHECK(hit.similarity < 1.0);
  CHECK(std::isfinite(hit.attacked_preservation));
}

TEST_SUITE_END();
