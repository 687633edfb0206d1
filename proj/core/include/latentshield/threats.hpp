#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentshield/models.hpp"

namespace latentshield {

/// One editing job as accepted by the command line. Core entry points below
/// take the relevant fields directly; this struct exists so configs can be
/// validated and serialized in one place.
struct EditRequest {
  std::string kind;         // "sdedit" | "inpaint" | "embed_invert" | "generate"
  double strength = 0.3;    // sdedit: fraction of the forward chain to re-noise
  int steps = 50;           // reverse steps for the sampled leg
  int cond_class = -1;      // class conditioning; -1 = unconditional
  std::string mask;         // inpaint: path to a binary mask image
  int invert_iters = 2000;  // embed_invert: optimizer iterations
  double invert_lr = 5e-4;  // embed_invert: optimizer learning rate
  int count = 4;            // generate: number of samples
  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static EditRequest from_json(const json& j);
};

/// Img2img editing: encode, jump partway up the forward noising chain
/// (t* = round(strength * T)), run the deterministic reverse sampler back
/// down, decode. strength must lie in (0, 1]. Deterministic per seed.
Tensor sdedit(const Tensor& x, const LdmBundle& bundle, double strength, int steps,
              const Tensor* cond = nullptr, std::uint64_t seed = 0);

struct InpaintResult {
  Tensor image;
  /// Mask selected nothing, so there was nothing to resynthesize; image is
  /// the plain autoencoder reconstruction.
  bool empty_mask = false;
};

/// Mask-guided resynthesis. mask is (1,1,H,W) or (n,1,H,W) with entries in
/// {0,1}; nonzero marks the region to regenerate. At every reverse step the
/// complement region is overwritten with the true encoding re-noised to the
/// current timestep, so kept content stays consistent with the sampler state.
InpaintResult inpaint(const Tensor& x, const Tensor& mask, const LdmBundle& bundle,
                      int steps = 50, const Tensor* cond = nullptr, std::uint64_t seed = 0);

struct InversionResult {
  Tensor embedding;           // (1, cond_dim, 1, 1), usable as a predict() condition
  std::vector<double> trace;  // minibatch noise-prediction loss per iteration
};

/// Thrown when the inversion loss blows up or turns non-finite; carries the
/// loss trace up to and including the offending iteration.
struct InversionDiverged : std::runtime_error {
  InversionDiverged(const std::string& what, std::vector<double> t)
      : std::runtime_error(what), trace(std::move(t)) {}
  std::vector<double> trace;
};

/// Fits a fresh conditioning embedding to a set of images (>= 3 required) by
/// minimizing noise-prediction error with every model weight frozen. Aborts
/// with the loss trace attached if the optimization diverges.
InversionResult invert_embedding(const Tensor& images, const LdmBundle& bundle,
                                 int iters = 2000, double lr = 5e-4, std::uint64_t seed = 0);

/// Samples `count` images from pure latent noise via the deterministic
/// reverse chain. count == 0 yields an empty batch.
Tensor generate(const LdmBundle& bundle, int count, int steps = 50,
                const Tensor* cond = nullptr, std::uint64_t seed = 0);

/// Broadcast a single (1, cond_dim, 1, 1) condition row to a batch.
Tensor broadcast_cond(const Tensor& row, int n);

}  // namespace latentshield
