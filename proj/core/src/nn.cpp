#include "latentshield/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace latentshield {

GradStats& grad_stats() {
  thread_local GradStats stats;
  return stats;
}

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

// im2col: (in_ch*k*k) x (n*oh*ow), columns ordered (n, oy, ox).
MatRM im2col(const Tensor& x, int kernel, int stride, int pad, int oh, int ow) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  MatRM cols(c * kernel * kernel, static_cast<long>(n) * oh * ow);
  cols.setZero();
  for (int ni = 0; ni < n; ++ni) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const long col = (static_cast<long>(ni) * oh + oy) * ow + ox;
        int row = 0;
        for (int ci = 0; ci < c; ++ci) {
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < kernel; ++kx, ++row) {
              const int ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                cols(row, col) = x.at(ni, ci, iy, ix);
              }
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accum(const MatRM& cols, Tensor& gx, int kernel, int stride, int pad, int oh,
                  int ow) {
  const int n = gx.n(), c = gx.c(), h = gx.h(), w = gx.w();
  for (int ni = 0; ni < n; ++ni) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const long col = (static_cast<long>(ni) * oh + oy) * ow + ox;
        int row = 0;
        for (int ci = 0; ci < c; ++ci) {
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < kernel; ++kx, ++row) {
              const int ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                gx.at(ni, ci, iy, ix) += cols(row, col);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
  w_ = Tensor(1, out_ch, 1, in_ch * kernel * kernel);
  b_ = Tensor(1, out_ch, 1, 1);
}

void Conv2d::init(Rng& rng) {
  // Kaiming-style fan-in scaling.
  const double scale = std::sqrt(2.0 / (in_ch_ * kernel_ * kernel_));
  for (std::size_t i = 0; i < w_.numel(); ++i) w_[i] = scale * rng.normal();
  b_.set_zero();
}

Tensor Conv2d::forward(const Tensor& x, TapeSlot* cache) const {
  if (x.c() != in_ch_) {
    throw std::invalid_argument("Conv2d: input channels " + std::to_string(x.c()) +
                                " != " + std::to_string(in_ch_));
  }
  const int oh = out_h(x.h()), ow = out_w(x.w());
  MatRM cols = im2col(x, kernel_, stride_, pad_, oh, ow);
  CMapM wm(w_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  MatRM y = wm * cols;  // (out_ch) x (n*oh*ow)

  Tensor out(x.n(), out_ch_, oh, ow);
  for (int ni = 0; ni < x.n(); ++ni) {
    for (int co = 0; co < out_ch_; ++co) {
      const double bias = b_[co];
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          out.at(ni, co, oy, ox) = y(co, (static_cast<long>(ni) * oh + oy) * ow + ox) + bias;
        }
      }
    }
  }
  if (cache) cache->store(x);
  return out;
}

Tensor Conv2d::backward(const Tensor& gout, const TapeSlot* cache, Tensor* wg, Tensor* bg) const {
  const int n = gout.n(), oh = gout.h(), ow = gout.w();
  const long cols_n = static_cast<long>(n) * oh * ow;

  // Repack gout as (out_ch) x (n*oh*ow).
  MatRM gy(out_ch_, cols_n);
  for (int ni = 0; ni < n; ++ni) {
    for (int co = 0; co < out_ch_; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          gy(co, (static_cast<long>(ni) * oh + oy) * ow + ox) = gout.at(ni, co, oy, ox);
        }
      }
    }
  }

  if (wg || bg) {
    if (!cache || !cache->set) {
      throw std::logic_error("Conv2d::backward: parameter gradients need a cached input");
    }
    MatRM cols = im2col(cache->value, kernel_, stride_, pad_, oh, ow);
    if (wg) {
      MatRM dw = gy * cols.transpose();
      MapM(wg->data(), out_ch_, in_ch_ * kernel_ * kernel_) += dw;
    }
    if (bg) {
      for (int co = 0; co < out_ch_; ++co) (*bg)[co] += gy.row(co).sum();
    }
  }

  // Input gradient does not need the cached activation, only the weights.
  const int in_h = cache && cache->set ? cache->value.h() : (oh - 1) * stride_ + kernel_ - 2 * pad_;
  const int in_w = cache && cache->set ? cache->value.w() : (ow - 1) * stride_ + kernel_ - 2 * pad_;
  CMapM wm(w_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  MatRM dcols = wm.transpose() * gy;
  Tensor gx(n, in_ch_, in_h, in_w);
  col2im_accum(dcols, gx, kernel_, stride_, pad_, oh, ow);
  return gx;
}

Dense::Dense(int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
  w_ = Tensor(1, out_dim, 1, in_dim);
  b_ = Tensor(1, out_dim, 1, 1);
}

void Dense::init(Rng& rng) {
  const double scale = std::sqrt(2.0 / in_dim_);
  for (std::size_t i = 0; i < w_.numel(); ++i) w_[i] = scale * rng.normal();
  b_.set_zero();
}

Tensor Dense::forward(const Tensor& x, TapeSlot* cache) const {
  if (x.c() != in_dim_ || x.h() != 1 || x.w() != 1) {
    throw std::invalid_argument("Dense: expected (n," + std::to_string(in_dim_) + ",1,1), got " +
                                x.shape_str());
  }
  Tensor out(x.n(), out_dim_, 1, 1);
  CMapM wm(w_.data(), out_dim_, in_dim_);
  CMapM xm(x.data(), x.n(), in_dim_);
  MapM om(out.data(), x.n(), out_dim_);
  om = xm * wm.transpose();
  for (int ni = 0; ni < x.n(); ++ni) {
    for (int o = 0; o < out_dim_; ++o) out.at(ni, o, 0, 0) += b_[o];
  }
  if (cache) cache->store(x);
  return out;
}

Tensor Dense::backward(const Tensor& gout, const TapeSlot* cache, Tensor* wg, Tensor* bg) const {
  const int n = gout.n();
  CMapM gm(gout.data(), n, out_dim_);
  if (wg || bg) {
    if (!cache || !cache->set) {
      throw std::logic_error("Dense::backward: parameter gradients need a cached input");
    }
    CMapM xm(cache->value.data(), n, in_dim_);
    if (wg) MapM(wg->data(), out_dim_, in_dim_) += gm.transpose() * xm;
    if (bg) {
      for (int o = 0; o < out_dim_; ++o) (*bg)[o] += gm.col(o).sum();
    }
  }
  Tensor gx(n, in_dim_, 1, 1);
  CMapM wm(w_.data(), out_dim_, in_dim_);
  MapM(gx.data(), n, in_dim_) = gm * wm;
  return gx;
}

Tensor silu(const Tensor& x, TapeSlot* cache) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    out[i] = x[i] * s;
  }
  if (cache) cache->store(x);
  return out;
}

Tensor silu_backward(const Tensor& gout, const TapeSlot& cache) {
  const Tensor& x = cache.value;
  Tensor gx = gout;
  for (std::size_t i = 0; i < gx.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    gx[i] *= s * (1.0 + x[i] * (1.0 - s));
  }
  return gx;
}

Tensor sigmoid(const Tensor& x, TapeSlot* cache) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  if (cache) cache->store(out);  // backward only needs y
  return out;
}

Tensor sigmoid_backward(const Tensor& gout, const TapeSlot& cache) {
  const Tensor& y = cache.value;
  Tensor gx = gout;
  for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
  return gx;
}

Tensor upsample2x(const Tensor& x) {
  Tensor out(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int ni = 0; ni < x.n(); ++ni)
    for (int ci = 0; ci < x.c(); ++ci)
      for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx) {
          const double v = x.at(ni, ci, y, xx);
          out.at(ni, ci, 2 * y, 2 * xx) = v;
          out.at(ni, ci, 2 * y, 2 * xx + 1) = v;
          out.at(ni, ci, 2 * y + 1, 2 * xx) = v;
          out.at(ni, ci, 2 * y + 1, 2 * xx + 1) = v;
        }
  return out;
}

Tensor upsample2x_backward(const Tensor& gout) {
  Tensor gx(gout.n(), gout.c(), gout.h() / 2, gout.w() / 2);
  for (int ni = 0; ni < gx.n(); ++ni)
    for (int ci = 0; ci < gx.c(); ++ci)
      for (int y = 0; y < gx.h(); ++y)
        for (int xx = 0; xx < gx.w(); ++xx) {
          gx.at(ni, ci, y, xx) = gout.at(ni, ci, 2 * y, 2 * xx) +
                                 gout.at(ni, ci, 2 * y, 2 * xx + 1) +
                                 gout.at(ni, ci, 2 * y + 1, 2 * xx) +
                                 gout.at(ni, ci, 2 * y + 1, 2 * xx + 1);
        }
  return gx;
}

Tensor avgpool2x2(const Tensor& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw std::invalid_argument("avgpool2x2: odd spatial size");
  }
  Tensor out(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int ni = 0; ni < x.n(); ++ni)
    for (int ci = 0; ci < x.c(); ++ci)
      for (int y = 0; y < out.h(); ++y)
        for (int xx = 0; xx < out.w(); ++xx) {
          out.at(ni, ci, y, xx) =
              0.25 * (x.at(ni, ci, 2 * y, 2 * xx) + x.at(ni, ci, 2 * y, 2 * xx + 1) +
                      x.at(ni, ci, 2 * y + 1, 2 * xx) + x.at(ni, ci, 2 * y + 1, 2 * xx + 1));
        }
  return out;
}

void add_channel_bias(Tensor& x, const Tensor& b) {
  if (b.n() != x.n() || b.c() != x.c() || b.h() != 1 || b.w() != 1) {
    throw std::invalid_argument("add_channel_bias: bias shape " + b.shape_str());
  }
  for (int ni = 0; ni < x.n(); ++ni)
    for (int ci = 0; ci < x.c(); ++ci) {
      const double v = b.at(ni, ci, 0, 0);
      for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx) x.at(ni, ci, y, xx) += v;
    }
}

Tensor reduce_channel_bias(const Tensor& g) {
  Tensor out(g.n(), g.c(), 1, 1);
  for (int ni = 0; ni < g.n(); ++ni)
    for (int ci = 0; ci < g.c(); ++ci) {
      double s = 0.0;
      for (int y = 0; y < g.h(); ++y)
        for (int xx = 0; xx < g.w(); ++xx) s += g.at(ni, ci, y, xx);
      out.at(ni, ci, 0, 0) = s;
    }
  return out;
}

Tensor sinusoidal_embedding(std::span<const int> t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
  Tensor out(static_cast<int>(t.size()), dim, 1, 1);
  const int half = dim / 2;
  for (std::size_t ni = 0; ni < t.size(); ++ni) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = t[ni] * freq;
      out.at(static_cast<int>(ni), i, 0, 0) = std::sin(a);
      out.at(static_cast<int>(ni), half + i, 0, 0) = std::cos(a);
    }
  }
  return out;
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: size mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Tensor(params[i]->n(), params[i]->c(), params[i]->h(), params[i]->w());
      v_[i] = m_[i];
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

}  // namespace latentshield
