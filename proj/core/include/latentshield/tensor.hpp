#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace latentshield {

/// Dense NCHW tensor of doubles. Vectors are stored as (n, d, 1, 1).
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w) { resize(n, c, h, w); }

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
  static Tensor full(int n, int c, int h, int w, double value);

  void resize(int n, int c, int h, int w);

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t numel() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  std::string shape_str() const;

  double& at(int n, int c, int y, int x) {
    return v_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
  }
  double at(int n, int c, int y, int x) const {
    return v_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
  }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  void fill(double value);
  void set_zero() { fill(0.0); }

  // In-place arithmetic; shapes must match where a tensor operand is given.
  Tensor& add(const Tensor& o);
  Tensor& sub(const Tensor& o);
  Tensor& mul(const Tensor& o);
  Tensor& scale(double s);
  Tensor& add_scaled(const Tensor& o, double s);  // this += s * o
  Tensor& clamp(double lo, double hi);

  double sum() const;
  double mean() const;
  double sq_sum() const;
  double max_abs() const;
  bool has_non_finite() const;

  /// Single-image view of row i (shares nothing; copies).
  Tensor slice_sample(int i) const;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> v_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double dot(const Tensor& a, const Tensor& b);
double rmse(const Tensor& a, const Tensor& b);
double linf_distance(const Tensor& a, const Tensor& b);

/// Stack single-sample tensors (all same c,h,w) along the batch axis.
Tensor stack(const std::vector<Tensor>& items);

/// Deterministic RNG: mt19937_64 uniforms + Box-Muller normals.
/// The normal stream is reproducible across platforms for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);        // inclusive bounds
  double normal();
  void fill_normal(Tensor& t);
  Tensor normal_like(const Tensor& t);

  /// Fold a label into a seed so sub-streams are independent per purpose.
  static std::uint64_t derive(std::uint64_t seed, std::string_view tag);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace latentshield
