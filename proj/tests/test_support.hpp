#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "latentshield/models.hpp"

namespace latentshield::testing {

/// Small architecture used throughout the unit tests: 8x8 3-channel images,
/// 2-channel latents, narrow denoiser. Cheap enough for finite differences.
inline AutoencoderArch tiny_ae_arch() {
  AutoencoderArch a;
  a.image_channels = 3;
  a.image_size = 8;
  a.base_channels = 8;
  a.latent_channels = 2;
  return a;
}

inline DenoiserArch tiny_dn_arch() {
  DenoiserArch a;
  a.data_channels = 2;
  a.base_channels = 8;
  a.time_dim = 8;
  a.time_hidden = 16;
  a.cond_dim = 8;
  a.num_classes = 4;
  return a;
}

/// Randomly initialized bundle marked trained. No actual training: tests that
/// use it check structure, determinism and math, not output quality. The
/// latent stats are deliberately non-trivial so normalization bugs surface,
/// and the denoiser parameters are jittered because init() zeroes its output
/// head (an identically-zero prediction would hide the whole graph from
/// gradient and conditioning tests).
inline LdmBundle tiny_trained_bundle(std::uint64_t seed = 11) {
  LdmBundle b;
  b.ae_arch = tiny_ae_arch();
  b.dn_arch = tiny_dn_arch();
  b.encoder = EncoderNet(b.ae_arch);
  b.decoder = DecoderNet(b.ae_arch);
  b.denoiser = DenoiserNet(b.dn_arch);
  Rng rng(seed);
  b.encoder.init(rng);
  b.decoder.init(rng);
  b.denoiser.init(rng);
  for (auto& [name, p] : b.denoiser.param_list()) {
    for (std::size_t i = 0; i < p->numel(); ++i) (*p)[i] += 0.05 * rng.normal();
  }
  b.schedule = make_schedule(50, 1e-4, 0.05, ScheduleKind::linear);
  b.latent_stats.mean = {0.1, -0.2};
  b.latent_stats.std = {0.8, 1.3};
  b.meta = {{"trained", true}};
  return b;
}

/// Batch of images in [0.1, 0.9] (strictly interior so projection onto [0,1]
/// does not bind at budget 0 and finite differences stay in-domain).
inline Tensor random_images(int n, int channels, int size, std::uint64_t seed) {
  Tensor x(n, channels, size, size);
  Rng rng(seed);
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(0.1, 0.9);
  return x;
}

/// Central-difference gradient of a scalar function at x, one entry at a time.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-5) {
  Tensor g(x.n(), x.c(), x.h(), x.w());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("latentshield_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace latentshield::testing
