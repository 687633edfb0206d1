#include <doctest.h>

#include "latentshield/checkpoint.hpp"
#include "latentshield/io.hpp"
#include "test_support.hpp"

using namespace latentshield;
using namespace latentshield::testing;

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("bundle save/load preserves architecture, meta and behavior") {
  TempDir tmp("ckpt");
  const LdmBundle b = tiny_trained_bundle(31);
  const auto path = tmp.path() / "bundle.lsc";
  save_bundle(path, b);

  const LdmBundle back = load_bundle(path);
  CHECK(back.ae_arch == b.ae_arch);
  CHECK(back.dn_arch == b.dn_arch);
  CHECK(back.schedule.T == b.schedule.T);
  CHECK(back.schedule.kind == b.schedule.kind);
  CHECK(back.latent_stats.mean == b.latent_stats.mean);
  CHECK(back.latent_stats.std == b.latent_stats.std);
  CHECK(back.meta == b.meta);
  CHECK(back.trained());

  // Parameters are stored as float32, so behavior matches to f32 precision.
  const Tensor x = random_images(2, 3, 8, 201);
  CHECK(rmse(back.encode(x), b.encode(x)) < 1e-5);
  const Tensor z = b.encode_normalized(x);
  const std::vector<int> t = {5, 9};
  CHECK(rmse(back.denoiser.predict(z, t, nullptr), b.denoiser.predict(z, t, nullptr)) < 1e-5);
}

TEST_CASE("checkpoint bytes are stable across save/load/save") {
  TempDir tmp("ckpt2");
  const LdmBundle b = tiny_trained_bundle(32);
  const auto p1 = tmp.path() / "a.lsc";
  const auto p2 = tmp.path() / "b.lsc";
  save_bundle(p1, b);
  save_bundle(p2, load_bundle(p1));
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("pixel bundle round-trip") {
  TempDir tmp("ckpt3");
  PixelDmBundle p;
  p.arch = tiny_dn_arch();
  p.arch.data_channels = 3;
  p.denoiser = DenoiserNet(p.arch);
  Rng rng(33);
  p.denoiser.init(rng);
  p.schedule = make_schedule(50, 1e-4, 0.05, ScheduleKind::linear);
  p.meta = {{"trained", true}};

  const auto path = tmp.path() / "pixel.lsc";
  save_pixel_bundle(path, p);
  const PixelDmBundle back = load_pixel_bundle(path);
  CHECK(back.arch == p.arch);
  CHECK(back.meta == p.meta);

  Tensor z(1, 3, 8, 8);
  Rng zrng(34);
  zrng.fill_normal(z);
  const std::vector<int> t = {7};
  CHECK(rmse(back.denoiser.predict(z, t, nullptr), p.denoiser.predict(z, t, nullptr)) < 1e-5);

  const auto path2 = tmp.path() / "pixel2.lsc";
  save_pixel_bundle(path2, back);
  CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("peek distinguishes checkpoint kinds without full loads") {
  TempDir tmp("ckpt4");
  save_bundle(tmp.path() / "l.lsc", tiny_trained_bundle(35));
  PixelDmBundle p;
  p.arch = tiny_dn_arch();
  p.denoiser = DenoiserNet(p.arch);
  Rng rng(36);
  p.denoiser.init(rng);
  p.schedule = make_schedule(10, 1e-3, 0.05, ScheduleKind::linear);
  save_pixel_bundle(tmp.path() / "p.lsc", p);

  CHECK(peek_checkpoint_kind(tmp.path() / "l.lsc") == "ldm_bundle");
  CHECK(peek_checkpoint_kind(tmp.path() / "p.lsc") == "pixel_dm");
  CHECK_THROWS_AS(load_pixel_bundle(tmp.path() / "l.lsc"), std::runtime_error);
  CHECK_THROWS_AS(load_bundle(tmp.path() / "p.lsc"), std::runtime_error);
}

TEST_CASE("corrupt files are rejected") {
  TempDir tmp("ckpt5");
  atomic_write_file(tmp.path() / "bad.lsc", "XXXXnot a checkpoint");
  CHECK_THROWS(load_bundle(tmp.path() / "bad.lsc"));
  CHECK_THROWS(peek_checkpoint_kind(tmp.path() / "bad.lsc"));

  // Truncated parameter blob.
  save_bundle(tmp.path() / "ok.lsc", tiny_trained_bundle(37));
  std::string bytes = read_file(tmp.path() / "ok.lsc");
  bytes.resize(bytes.size() - 64);
  atomic_write_file(tmp.path() / "trunc.lsc", bytes);
  CHECK_THROWS(load_bundle(tmp.path() / "trunc.lsc"));
}

TEST_SUITE_END();
