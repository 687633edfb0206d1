#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "latentshield/tensor.hpp"

namespace latentshield {

/// Per-thread counters for activation caches retained for backprop.
/// Gradient paths that run a network inference-only must leave these
/// counters untouched for that network's layers.
struct GradStats {
  long long nodes_tracked = 0;
  long long bytes_cached = 0;

  void reset() {
    nodes_tracked = 0;
    bytes_cached = 0;
  }
  void on_cache(std::size_t elements) {
    ++nodes_tracked;
    bytes_cached += static_cast<long long>(elements * sizeof(double));
  }
};

GradStats& grad_stats();

/// Records an activation needed later by a backward pass.
/// `cache` may be null, in which case nothing is stored (inference).
struct TapeSlot {
  Tensor value;
  bool set = false;

  void store(const Tensor& t) {
    value = t;
    set = true;
    grad_stats().on_cache(t.numel());
  }
};

// ---------------------------------------------------------------------------
// Layers. Parameters live in the layer; activation caches live with the
// caller so const layers are safe to share across threads.
// ---------------------------------------------------------------------------

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad);

  void init(Rng& rng);
  Tensor forward(const Tensor& x, TapeSlot* cache) const;
  /// Input gradient; accumulates into wg/bg when non-null (requires cache).
  Tensor backward(const Tensor& gout, const TapeSlot* cache, Tensor* wg, Tensor* bg) const;

  int out_h(int h) const { return (h + 2 * pad_ - kernel_) / stride_ + 1; }
  int out_w(int w) const { return (w + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }
  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
  Tensor w_;  // (1, out_ch, 1, in_ch*k*k)
  Tensor b_;  // (1, out_ch, 1, 1)
};

class Dense {
 public:
  Dense() = default;
  Dense(int in_dim, int out_dim);

  void init(Rng& rng);
  /// x: (n, in_dim, 1, 1) -> (n, out_dim, 1, 1)
  Tensor forward(const Tensor& x, TapeSlot* cache) const;
  Tensor backward(const Tensor& gout, const TapeSlot* cache, Tensor* wg, Tensor* bg) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }
  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  int in_dim_ = 0, out_dim_ = 0;
  Tensor w_;  // (1, out_dim, 1, in_dim)
  Tensor b_;  // (1, out_dim, 1, 1)
};

// Activations; backward needs the forward input.
Tensor silu(const Tensor& x, TapeSlot* cache);
Tensor silu_backward(const Tensor& gout, const TapeSlot& cache);
Tensor sigmoid(const Tensor& x, TapeSlot* cache);
Tensor sigmoid_backward(const Tensor& gout, const TapeSlot& cache);

Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& gout);

Tensor avgpool2x2(const Tensor& x);

/// Adds b[n][c] to every spatial position of x[n][c][:][:].
void add_channel_bias(Tensor& x, const Tensor& b);
/// Reduces a spatial gradient back to per-channel bias shape (n, c, 1, 1).
Tensor reduce_channel_bias(const Tensor& g);

/// Standard transformer-style sinusoidal features of integer timesteps.
Tensor sinusoidal_embedding(std::span<const int> t, int dim);

// ---------------------------------------------------------------------------
// Parameter plumbing shared by training, checkpointing and the optimizer.
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// params[i] and grads[i] must be shape-identical across calls.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace latentshield
