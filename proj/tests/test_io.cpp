#include <doctest.h>

#include <cstring>
#include <fstream>

#include "latentshield/io.hpp"
#include "test_support.hpp"

using namespace latentshield;
using latentshield::testing::TempDir;

TEST_SUITE_BEGIN("io");

TEST_CASE("atomic write then read round-trips bytes") {
  TempDir tmp("io");
  const auto path = tmp.path() / "sub" / "file.bin";
  const std::string full("hello\0world\n\xff binary", 20);
  std::filesystem::create_directories(path.parent_path());
  atomic_write_file(path, full);
  CHECK(read_file(path) == full);
  // Overwrite is atomic and replaces content fully.
  atomic_write_file(path, "short");
  CHECK(read_file(path) == "short");
  // No temp litter left behind.
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(path.parent_path())) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);
}

TEST_CASE("json file round-trip") {
  TempDir tmp("json");
  const json j = {{"a", 1}, {"b", {1, 2, 3}}, {"c", {{"nested", true}}}};
  write_json_atomic(tmp.path() / "x.json", j);
  CHECK(read_json_file(tmp.path() / "x.json") == j);
  CHECK_THROWS(read_json_file(tmp.path() / "missing.json"));
}

TEST_CASE("npy round-trip preserves doubles bit-exactly") {
  TempDir tmp("npy");
  Tensor t(2, 3, 4, 5);
  Rng rng(1);
  rng.fill_normal(t);
  t[0] = 1e-300;
  t[1] = -0.0;
  t[2] = 3.141592653589793;
  write_npy(tmp.path() / "t.npy", t);
  const Tensor back = read_npy(tmp.path() / "t.npy");
  REQUIRE(back.same_shape(t));
  CHECK(std::memcmp(back.data(), t.data(), t.numel() * sizeof(double)) == 0);
}

TEST_CASE("npy rejects malformed headers") {
  TempDir tmp("npybad");
  const auto path = tmp.path() / "bad.npy";
  atomic_write_file(path, "not an npy file at all");
  CHECK_THROWS(read_npy(path));
}

TEST_CASE("png round-trip is exact on the 8-bit grid") {
  TempDir tmp("png");
  Tensor img(1, 3, 6, 5);
  Rng rng(2);
  // Values exactly representable as v = k/255 survive the byte quantization.
  for (std::size_t i = 0; i < img.numel(); ++i) {
    img[i] = rng.uniform_int(0, 255) / 255.0;
  }
  write_png(tmp.path() / "img.png", img);
  const Tensor back = read_png(tmp.path() / "img.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.numel(); ++i) {
    CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
  }
}

TEST_CASE("png grayscale and shape validation") {
  TempDir tmp("pnggray");
  Tensor gray(1, 1, 4, 4);
  gray.fill(0.5);
  write_png(tmp.path() / "g.png", gray);
  const Tensor back = read_png(tmp.path() / "g.png");
  CHECK(back.c() == 1);
  CHECK(back.at(0, 0, 2, 2) == doctest::Approx(std::round(0.5 * 255) / 255.0));

  Tensor batch(2, 3, 4, 4);
  CHECK_THROWS_AS(write_png(tmp.path() / "b.png", batch), std::invalid_argument);
  Tensor four(1, 4, 4, 4);
  CHECK_THROWS_AS(write_png(tmp.path() / "f.png", four), std::invalid_argument);
}

TEST_CASE("png writer clamps out-of-range values") {
  TempDir tmp("pngclamp");
  Tensor img(1, 1, 2, 2);
  img[0] = -0.5;
  img[1] = 1.5;
  img[2] = 0.0;
  img[3] = 1.0;
  write_png(tmp.path() / "c.png", img);
  const Tensor back = read_png(tmp.path() / "c.png");
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 1.0);
}

TEST_CASE("fnv1a64 known vectors and file variant") {
  // Published reference values for FNV-1a 64-bit.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);

  TempDir tmp("fnv");
  atomic_write_file(tmp.path() / "f", "foobar");
  CHECK(fnv1a64_file(tmp.path() / "f") == fnv1a64("foobar"));
  CHECK(hex_u64(0x85944171f73967e8ull) == "85944171f73967e8");
}

TEST_SUITE_END();
