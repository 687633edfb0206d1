#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "latentshield/dataset.hpp"
#include "latentshield/diffusion.hpp"
#include "latentshield/io.hpp"
#include "latentshield/nn.hpp"

namespace latentshield {

// ---------------------------------------------------------------------------
// Architecture descriptors (serialized into checkpoints).
// ---------------------------------------------------------------------------

struct AutoencoderArch {
  int image_channels = 3;
  int image_size = 32;
  int base_channels = 16;
  int latent_channels = 4;
  // Two stride-2 convs fix the spatial downsample factor at 4.
  static constexpr int kDownsample = 4;

  json to_json() const;
  static AutoencoderArch from_json(const json& j);
  bool operator==(const AutoencoderArch&) const = default;
};

struct DenoiserArch {
  int data_channels = 4;  // latent channels, or image channels for pixel-space
  int base_channels = 32;
  int time_dim = 32;
  int time_hidden = 64;
  int cond_dim = 16;
  int num_classes = 4;

  json to_json() const;
  static DenoiserArch from_json(const json& j);
  bool operator==(const DenoiserArch&) const = default;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;
using NamedParamsConst = std::vector<std::pair<std::string, const Tensor*>>;

// ---------------------------------------------------------------------------
// Networks. forward() takes an optional cache; backward() needs that cache and
// optionally accumulates parameter gradients (same order as param_list()).
// Layers are const during forward/backward, so a loaded net is safe to share
// across threads as long as each thread owns its caches.
// ---------------------------------------------------------------------------

class EncoderNet {
 public:
  EncoderNet() = default;
  explicit EncoderNet(const AutoencoderArch& arch);
  void init(Rng& rng);

  struct Cache {
    TapeSlot c1, a1, c2, a2, c3, a3, c4;
  };

  /// (n, image_channels, S, S) -> (n, latent_channels, S/4, S/4)
  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& gout, const Cache& cache,
                  std::vector<Tensor>* param_grads) const;

  NamedParams param_list();
  NamedParamsConst param_list() const;
  std::vector<Tensor> zero_param_grads() const;
  std::size_t param_count() const;
  const AutoencoderArch& arch() const { return arch_; }

 private:
  AutoencoderArch arch_;
  Conv2d conv1_, conv2_, conv3_, conv4_;
};

class DecoderNet {
 public:
  DecoderNet() = default;
  explicit DecoderNet(const AutoencoderArch& arch);
  void init(Rng& rng);

  struct Cache {
    TapeSlot c1, a1, c2, a2, c3, a3, c4, s4;
  };

  /// (n, latent_channels, S/4, S/4) -> (n, image_channels, S, S), in (0,1)
  Tensor forward(const Tensor& z, Cache* cache) const;
  Tensor backward(const Tensor& gout, const Cache& cache,
                  std::vector<Tensor>* param_grads) const;

  NamedParams param_list();
  NamedParamsConst param_list() const;
  std::vector<Tensor> zero_param_grads() const;
  std::size_t param_count() const;
  const AutoencoderArch& arch() const { return arch_; }

 private:
  AutoencoderArch arch_;
  Conv2d conv1_, conv2_, conv3_, conv4_;
};

/// Residual conv denoiser with sinusoidal timestep features and an additive
/// per-channel condition embedding. predict() is inference-only and leaves
/// gradient instrumentation untouched.
class DenoiserNet : public Denoiser {
 public:
  DenoiserNet() = default;
  explicit DenoiserNet(const DenoiserArch& arch);
  /// Output head is zero-initialized, so an untrained net predicts 0.
  void init(Rng& rng);

  struct BlockCache {
    TapeSlot pre_a, conv_a, pre_b, conv_b, dense_t, dense_c;
  };
  struct Cache {
    TapeSlot in;
    TapeSlot t_mlp_in, t_mlp_pre;
    BlockCache blocks[2];
    TapeSlot pre_out, conv_out;
  };

  Tensor forward(const Tensor& z, std::span<const int> t, const Tensor* cond,
                 Cache* cache) const;
  Tensor predict(const Tensor& z, std::span<const int> t, const Tensor* cond) const override;
  /// Recomputes the forward pass with a local cache, then backpropagates.
  Tensor backward_input(const Tensor& z, std::span<const int> t, const Tensor* cond,
                        const Tensor& gout) const override;

  struct BackwardResult {
    Tensor dz;     // gradient w.r.t. the input latents
    Tensor dcond;  // gradient w.r.t. the condition embedding (n, cond_dim, 1, 1)
  };
  BackwardResult backward(const Tensor& gout, const Cache& cache,
                          std::vector<Tensor>* param_grads) const;

  /// Learned per-class condition row; label must be in [0, num_classes).
  Tensor class_embedding(int label) const;
  Tensor& class_embedding_table() { return class_embed_; }

  NamedParams param_list();
  NamedParamsConst param_list() const;
  std::vector<Tensor> zero_param_grads() const;
  std::size_t param_count() const;
  const DenoiserArch& arch() const { return arch_; }

 private:
  struct Block {
    Conv2d conv_a, conv_b;
    Dense dense_t, dense_c;
  };
  DenoiserArch arch_;
  Conv2d conv_in_, conv_out_;
  Dense t_mlp_;
  Block b1_, b2_;
  Tensor class_embed_;  // (1, num_classes, 1, cond_dim)
};

// ---------------------------------------------------------------------------
// Latent normalization statistics.
// ---------------------------------------------------------------------------

struct LatentStats {
  std::vector<double> mean, std;

  json to_json() const;
  static LatentStats from_json(const json& j);
};

/// Per-channel moments of encoded images; requires >= min_images inputs.
LatentStats compute_latent_stats(const EncoderNet& encoder, const Tensor& images,
                                 int min_images = 256);

// ---------------------------------------------------------------------------
// Bundles.
// ---------------------------------------------------------------------------

struct LdmBundle {
  AutoencoderArch ae_arch;
  DenoiserArch dn_arch;
  EncoderNet encoder;
  DecoderNet decoder;
  DenoiserNet denoiser;  // operates on normalized latents
  NoiseSchedule schedule;
  LatentStats latent_stats;
  json meta;

  Tensor encode(const Tensor& x) const;  // raw latents
  Tensor decode(const Tensor& z) const;  // clamped to [0,1]
  Tensor normalize_latent(const Tensor& z) const;
  Tensor denormalize_latent(const Tensor& zn) const;
  Tensor encode_normalized(const Tensor& x) const;
  Tensor decode_denormalized(const Tensor& zn) const;

  /// Pooled, flattened normalized latents: a compact perceptual feature.
  Tensor features(const Tensor& x) const;
  int feature_dim() const;

  /// Whether meta.trained == true. Operations that depend on a converged
  /// denoiser refuse to run otherwise.
  bool trained() const;
  void require_trained() const;
};

struct PixelDmBundle {
  DenoiserArch arch;
  DenoiserNet denoiser;  // operates directly on images shifted to [-1,1]
  NoiseSchedule schedule;
  json meta;
};

/// Map [0,1] images to the [-1,1] range pixel-space denoisers train on.
Tensor to_signed_range(const Tensor& x);
Tensor from_signed_range(const Tensor& x);

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  bool converged = false;
  double final_metric = 0.0;  // val RMSE (autoencoder) or val loss (denoiser)

  json to_json() const;
};

struct AeTrainConfig {
  int epochs = 80;
  int batch_size = 32;
  double lr = 2e-3;
  double target_rmse = 0.08;
  double val_fraction = 0.1;
  int min_images = 512;
  std::uint64_t seed = 7;
};

/// Trains encoder+decoder jointly on pixel MSE. converged = held-out RMSE
/// reached cfg.target_rmse; on failure the history is still returned so the
/// caller can attach it to a failed-run report.
TrainHistory train_autoencoder(EncoderNet& enc, DecoderNet& dec, const Dataset& ds,
                               const AeTrainConfig& cfg, std::ostream* log = nullptr);

struct DmTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 1.5e-3;
  double val_fraction = 0.1;
  double cond_dropout = 0.1;  // train the unconditional path too
  std::uint64_t seed = 9;
};

/// Noise-prediction training on pre-normalized latents (or [-1,1] images for
/// the pixel-space model). Throws on NaN loss with a diagnostic.
TrainHistory train_denoiser(DenoiserNet& dn, const Tensor& data,
                            const std::vector<int>& labels, const NoiseSchedule& schedule,
                            const DmTrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace latentshield
