#include <doctest.h>

#include "latentshield/tensor.hpp"

using namespace latentshield;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape and indexing") {
  Tensor t(2, 3, 4, 5);
  CHECK(t.n() == 2);
  CHECK(t.c() == 3);
  CHECK(t.h() == 4);
  CHECK(t.w() == 5);
  CHECK(t.numel() == 2u * 3 * 4 * 5);
  t.at(1, 2, 3, 4) = 7.0;
  CHECK(t[t.numel() - 1] == 7.0);  // last element in NCHW order
  CHECK(t.at(0, 0, 0, 0) == 0.0);  // zero-initialized
}

TEST_CASE("zero-sized batches are allowed") {
  Tensor t(0, 3, 4, 4);
  CHECK(t.numel() == 0);
  CHECK(t.empty());
  CHECK(!t.has_non_finite());
}

TEST_CASE("arithmetic") {
  Tensor a = Tensor::full(1, 1, 2, 2, 2.0);
  Tensor b = Tensor::full(1, 1, 2, 2, 3.0);
  CHECK((a + b).sum() == doctest::Approx(20.0));
  CHECK((a - b).sum() == doctest::Approx(-4.0));
  CHECK((a * 2.0).sum() == doctest::Approx(16.0));
  Tensor c = a;
  c.add_scaled(b, -0.5);
  CHECK(c.sum() == doctest::Approx(2.0));
  c.clamp(0.4, 0.45);
  CHECK(c.sum() == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(dot(a, b) == doctest::Approx(24.0));
  CHECK(a.sq_sum() == doctest::Approx(16.0));
  CHECK(a.mean() == doctest::Approx(2.0));
}

TEST_CASE("distance helpers") {
  Tensor a = Tensor::full(1, 1, 1, 4, 1.0);
  Tensor b = a;
  b[2] = 3.0;
  CHECK(linf_distance(a, b) == doctest::Approx(2.0));
  CHECK(rmse(a, b) == doctest::Approx(1.0));  // sqrt(4/4)
  CHECK(rmse(a, a) == 0.0);
}

TEST_CASE("non-finite detection") {
  Tensor a(1, 1, 1, 3);
  CHECK(!a.has_non_finite());
  a[1] = std::numeric_limits<double>::infinity();
  CHECK(a.has_non_finite());
  a[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(a.has_non_finite());
}

TEST_CASE("slice and stack round-trip") {
  Tensor batch(3, 2, 2, 2);
  for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = static_cast<double>(i);
  std::vector<Tensor> rows;
  for (int i = 0; i < 3; ++i) rows.push_back(batch.slice_sample(i));
  CHECK(rows[1].n() == 1);
  CHECK(rows[1].at(0, 0, 0, 0) == batch.at(1, 0, 0, 0));
  Tensor back = stack(rows);
  CHECK(back.same_shape(batch));
  for (std::size_t i = 0; i < batch.numel(); ++i) CHECK(back[i] == batch[i]);
}

TEST_CASE("stack rejects mixed shapes") {
  std::vector<Tensor> rows = {Tensor(1, 1, 2, 2), Tensor(1, 1, 2, 3)};
  CHECK_THROWS_AS(stack(rows), std::invalid_argument);
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(123), b(123), c(124);
  bool all_equal = true;
  bool any_differs = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.normal(), vb = b.normal(), vc = c.normal();
    all_equal = all_equal && va == vb;
    any_differs = any_differs || va != vc;
  }
  CHECK(all_equal);
  CHECK(any_differs);
  CHECK(Rng::derive(1, "x") != Rng::derive(1, "y"));
  CHECK(Rng::derive(1, "x") != Rng::derive(2, "x"));
  CHECK(Rng::derive(1, "x") == Rng::derive(1, "x"));
}

TEST_CASE("rng uniform_int bounds are inclusive and covered") {
  Rng rng(7);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 1000; ++i) {
    const int v = rng.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    saw_lo = saw_lo || v == 2;
    saw_hi = saw_hi || v == 5;
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}

TEST_CASE("rng normal moments") {
  Rng rng(99);
  const int kN = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < kN; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / kN;
  const double var = sq / kN - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_SUITE_END();
