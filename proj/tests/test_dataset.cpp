#include <doctest.h>

#include "latentshield/dataset.hpp"
#include "latentshield/io.hpp"
#include "test_support.hpp"

using namespace latentshield;
using latentshield::testing::TempDir;

TEST_SUITE_BEGIN("dataset");

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.count = 16;
  s.image_size = 16;
  s.channels = 3;
  s.seed = 77;
  return s;
}

}  // namespace

TEST_CASE("generation is deterministic and in range") {
  const Dataset a = make_dataset(small_spec());
  const Dataset b = make_dataset(small_spec());
  REQUIRE(a.count() == 16);
  REQUIRE(a.images.same_shape(b.images));
  for (std::size_t i = 0; i < a.images.numel(); ++i) {
    CHECK(a.images[i] == b.images[i]);
    CHECK(a.images[i] >= 0.0);
    CHECK(a.images[i] <= 1.0);
  }
  CHECK(a.labels == b.labels);

  DatasetSpec other = small_spec();
  other.seed = 78;
  const Dataset c = make_dataset(other);
  CHECK(rmse(a.images, c.images) > 1e-3);
}

TEST_CASE("labels cycle through all families") {
  const Dataset ds = make_dataset(small_spec());
  std::vector<int> counts(kNumFamilies, 0);
  for (int l : ds.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < kNumFamilies);
    counts[l]++;
  }
  for (int c : counts) CHECK(c == 16 / kNumFamilies);
}

TEST_CASE("family images differ visibly across families") {
  Rng rng(5);
  const Tensor blobs = render_family_image(ImageFamily::blobs, 16, 3, rng, "base");
  Rng rng2(5);
  const Tensor stripes = render_family_image(ImageFamily::stripes, 16, 3, rng2, "base");
  CHECK(rmse(blobs, stripes) > 0.01);
}

TEST_CASE("style variants change content but not determinism") {
  DatasetSpec s = small_spec();
  s.style = "alt";
  const Dataset alt1 = make_dataset(s);
  const Dataset alt2 = make_dataset(s);
  CHECK(rmse(alt1.images, alt2.images) == 0.0);
  const Dataset base = make_dataset(small_spec());
  CHECK(rmse(alt1.images, base.images) > 1e-3);
}

TEST_CASE("save and load round-trip") {
  TempDir tmp("dataset");
  const Dataset ds = make_dataset(small_spec());
  save_dataset(tmp.path(), ds);
  CHECK(std::filesystem::exists(tmp.path() / "manifest.json"));

  const Dataset back = load_dataset(tmp.path());
  REQUIRE(back.count() == ds.count());
  CHECK(back.labels == ds.labels);
  CHECK(back.spec.seed == ds.spec.seed);
  // Pixels pass through 8-bit PNG, so they move by at most half a bin; the
  // content hash quantizes the same way and must be unchanged.
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    CHECK(std::abs(back.images[i] - ds.images[i]) <= 0.5 / 255.0 + 1e-12);
  }
  CHECK(dataset_hash(back) == dataset_hash(ds));

  // Loading twice gives identical tensors (PNG decode is exact).
  const Dataset again = load_dataset(tmp.path());
  CHECK(rmse(again.images, back.images) == 0.0);
}

TEST_CASE("hash is order-sensitive and content-sensitive") {
  const Dataset a = make_dataset(small_spec());
  Dataset mutated = a;
  mutated.images[0] = mutated.images[0] > 0.5 ? 0.0 : 1.0;
  CHECK(dataset_hash(mutated) != dataset_hash(a));
  Dataset relabeled = a;
  relabeled.labels[0] = (relabeled.labels[0] + 1) % kNumFamilies;
  CHECK(dataset_hash(relabeled) != dataset_hash(a));
}

TEST_CASE("grayscale datasets") {
  DatasetSpec s = small_spec();
  s.channels = 1;
  const Dataset ds = make_dataset(s);
  CHECK(ds.images.c() == 1);
  TempDir tmp("gray");
  save_dataset(tmp.path(), ds);
  const Dataset back = load_dataset(tmp.path());
  CHECK(back.images.c() == 1);
  CHECK(dataset_hash(back) == dataset_hash(ds));
}

TEST_SUITE_END();
