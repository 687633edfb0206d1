#include "latentshield/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latentshield {

Tensor Tensor::full(int n, int c, int h, int w, double value) {
  Tensor t(n, c, h, w);
  t.fill(value);
  return t;
}

void Tensor::resize(int n, int c, int h, int w) {
  if (n < 0 || c < 0 || h < 0 || w < 0) {
    throw std::invalid_argument("Tensor::resize: negative dimension");
  }
  n_ = n;
  c_ = c;
  h_ = h;
  w_ = w;
  v_.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," +
         std::to_string(h_) + "," + std::to_string(w_) + ")";
}

void Tensor::fill(double value) { std::fill(v_.begin(), v_.end(), value); }

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}
}  // namespace

Tensor& Tensor::add(const Tensor& o) {
  check_same_shape(*this, o, "Tensor::add");
  for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
  return *this;
}

Tensor& Tensor::sub(const Tensor& o) {
  check_same_shape(*this, o, "Tensor::sub");
  for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
  return *this;
}

Tensor& Tensor::mul(const Tensor& o) {
  check_same_shape(*this, o, "Tensor::mul");
  for (std::size_t i = 0; i < v_.size(); ++i) v_[i] *= o.v_[i];
  return *this;
}

Tensor& Tensor::scale(double s) {
  for (double& x : v_) x *= s;
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& o, double s) {
  check_same_shape(*this, o, "Tensor::add_scaled");
  for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += s * o.v_[i];
  return *this;
}

Tensor& Tensor::clamp(double lo, double hi) {
  for (double& x : v_) x = std::min(hi, std::max(lo, x));
  return *this;
}

double Tensor::sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }

double Tensor::mean() const { return v_.empty() ? 0.0 : sum() / static_cast<double>(v_.size()); }

double Tensor::sq_sum() const {
  double s = 0.0;
  for (double x : v_) s += x * x;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : v_) m = std::max(m, std::fabs(x));
  return m;
}

bool Tensor::has_non_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return true;
  }
  return false;
}

Tensor Tensor::slice_sample(int i) const {
  if (i < 0 || i >= n_) throw std::out_of_range("Tensor::slice_sample: index");
  Tensor out(1, c_, h_, w_);
  const std::size_t stride = static_cast<std::size_t>(c_) * h_ * w_;
  std::copy_n(v_.begin() + i * stride, stride, out.v_.begin());
  return out;
}

Tensor operator+(Tensor a, const Tensor& b) { return a.add(b); }
Tensor operator-(Tensor a, const Tensor& b) { return a.sub(b); }
Tensor operator*(Tensor a, double s) { return a.scale(s); }

double dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double rmse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "rmse");
  if (a.numel() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.numel()));
}

double linf_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "linf_distance");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) return Tensor();
  const Tensor& first = items.front();
  Tensor out(static_cast<int>(items.size()), first.c(), first.h(), first.w());
  const std::size_t stride = first.numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].n() != 1 || items[i].c() != first.c() || items[i].h() != first.h() ||
        items[i].w() != first.w()) {
      throw std::invalid_argument("stack: all items must be single samples of equal shape");
    }
    std::copy_n(items[i].data(), stride, out.data() + i * stride);
  }
  return out;
}

double Rng::uniform() {
  // 53-bit mantissa from the top bits.
  return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi) - lo + 1;
  return lo + static_cast<int>(gen_() % span);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0,1] so log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

void Rng::fill_normal(Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = normal();
}

Tensor Rng::normal_like(const Tensor& t) {
  Tensor out(t.n(), t.c(), t.h(), t.w());
  fill_normal(out);
  return out;
}

std::uint64_t Rng::derive(std::uint64_t seed, std::string_view tag) {
  // splitmix64 over the seed folded with an FNV-1a hash of the tag.
  std::uint64_t h = 14695981039346656037ull;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace latentshield
