#include "latentshield/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace latentshield {

// ---------------------------------------------------------------------------
// Arch descriptors
// ---------------------------------------------------------------------------

json AutoencoderArch::to_json() const {
  return {{"image_channels", image_channels},
          {"image_size", image_size},
          {"base_channels", base_channels},
          {"latent_channels", latent_channels}};
}

AutoencoderArch AutoencoderArch::from_json(const json& j) {
  AutoencoderArch a;
  a.image_channels = j.at("image_channels").get<int>();
  a.image_size = j.at("image_size").get<int>();
  a.base_channels = j.at("base_channels").get<int>();
  a.latent_channels = j.at("latent_channels").get<int>();
  return a;
}

json DenoiserArch::to_json() const {
  return {{"data_channels", data_channels}, {"base_channels", base_channels},
          {"time_dim", time_dim},           {"time_hidden", time_hidden},
          {"cond_dim", cond_dim},           {"num_classes", num_classes}};
}

DenoiserArch DenoiserArch::from_json(const json& j) {
  DenoiserArch a;
  a.data_channels = j.at("data_channels").get<int>();
  a.base_channels = j.at("base_channels").get<int>();
  a.time_dim = j.at("time_dim").get<int>();
  a.time_hidden = j.at("time_hidden").get<int>();
  a.cond_dim = j.at("cond_dim").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  return a;
}

namespace {

std::size_t count_params(const NamedParamsConst& list) {
  std::size_t n = 0;
  for (const auto& [name, t] : list) n += t->numel();
  return n;
}

std::vector<Tensor> zeros_like(const NamedParamsConst& list) {
  std::vector<Tensor> out;
  out.reserve(list.size());
  for (const auto& [name, t] : list) {
    out.emplace_back(t->n(), t->c(), t->h(), t->w());
  }
  return out;
}

NamedParamsConst to_const(const NamedParams& list) {
  NamedParamsConst out;
  out.reserve(list.size());
  for (const auto& [name, t] : list) out.emplace_back(name, t);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// EncoderNet: conv(s2) -> silu -> conv(s2) -> silu -> conv -> silu -> conv
// ---------------------------------------------------------------------------

EncoderNet::EncoderNet(const AutoencoderArch& arch) : arch_(arch) {
  const int b = arch.base_channels;
  conv1_ = Conv2d(arch.image_channels, b, 3, 2, 1);
  conv2_ = Conv2d(b, 2 * b, 3, 2, 1);
  conv3_ = Conv2d(2 * b, 2 * b, 3, 1, 1);
  conv4_ = Conv2d(2 * b, arch.latent_channels, 3, 1, 1);
}

void EncoderNet::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  conv4_.init(rng);
}

Tensor EncoderNet::forward(const Tensor& x, Cache* cache) const {
  if (x.c() != arch_.image_channels || x.h() != arch_.image_size || x.w() != arch_.image_size) {
    throw std::invalid_argument("encoder input shape " + x.shape_str() + " does not match " +
                                std::to_string(arch_.image_channels) + "x" +
                                std::to_string(arch_.image_size) + "x" +
                                std::to_string(arch_.image_size));
  }
  Tensor h = conv1_.forward(x, cache ? &cache->c1 : nullptr);
  h = silu(h, cache ? &cache->a1 : nullptr);
  h = conv2_.forward(h, cache ? &cache->c2 : nullptr);
  h = silu(h, cache ? &cache->a2 : nullptr);
  h = conv3_.forward(h, cache ? &cache->c3 : nullptr);
  h = silu(h, cache ? &cache->a3 : nullptr);
  return conv4_.forward(h, cache ? &cache->c4 : nullptr);
}

Tensor EncoderNet::backward(const Tensor& gout, const Cache& cache,
                            std::vector<Tensor>* param_grads) const {
  auto* g = param_grads;
  auto wp = [&](int i) { return g ? &(*g)[i] : nullptr; };
  Tensor gr = conv4_.backward(gout, &cache.c4, wp(6), wp(7));
  gr = silu_backward(gr, cache.a3);
  gr = conv3_.backward(gr, &cache.c3, wp(4), wp(5));
  gr = silu_backward(gr, cache.a2);
  gr = conv2_.backward(gr, &cache.c2, wp(2), wp(3));
  gr = silu_backward(gr, cache.a1);
  return conv1_.backward(gr, &cache.c1, wp(0), wp(1));
}

NamedParams EncoderNet::param_list() {
  return {{"conv1.weight", &conv1_.weight()}, {"conv1.bias", &conv1_.bias()},
          {"conv2.weight", &conv2_.weight()}, {"conv2.bias", &conv2_.bias()},
          {"conv3.weight", &conv3_.weight()}, {"conv3.bias", &conv3_.bias()},
          {"conv4.weight", &conv4_.weight()}, {"conv4.bias", &conv4_.bias()}};
}

NamedParamsConst EncoderNet::param_list() const {
  return to_const(const_cast<EncoderNet*>(this)->param_list());
}

std::vector<Tensor> EncoderNet::zero_param_grads() const { return zeros_like(param_list()); }
std::size_t EncoderNet::param_count() const { return count_params(param_list()); }

// ---------------------------------------------------------------------------
// DecoderNet: conv -> silu -> up -> conv -> silu -> up -> conv -> silu -> conv
//             -> sigmoid
// ---------------------------------------------------------------------------

DecoderNet::DecoderNet(const AutoencoderArch& arch) : arch_(arch) {
  const int b = arch.base_channels;
  conv1_ = Conv2d(arch.latent_channels, 2 * b, 3, 1, 1);
  conv2_ = Conv2d(2 * b, 2 * b, 3, 1, 1);
  conv3_ = Conv2d(2 * b, b, 3, 1, 1);
  conv4_ = Conv2d(b, arch.image_channels, 3, 1, 1);
}

void DecoderNet::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  conv4_.init(rng);
}

Tensor DecoderNet::forward(const Tensor& z, Cache* cache) const {
  const int zs = arch_.image_size / AutoencoderArch::kDownsample;
  if (z.c() != arch_.latent_channels || z.h() != zs || z.w() != zs) {
    throw std::invalid_argument("decoder input shape " + z.shape_str() + " does not match " +
                                std::to_string(arch_.latent_channels) + "x" + std::to_string(zs) +
                                "x" + std::to_string(zs));
  }
  Tensor h = conv1_.forward(z, cache ? &cache->c1 : nullptr);
  h = silu(h, cache ? &cache->a1 : nullptr);
  h = upsample2x(h);
  h = conv2_.forward(h, cache ? &cache->c2 : nullptr);
  h = silu(h, cache ? &cache->a2 : nullptr);
  h = upsample2x(h);
  h = conv3_.forward(h, cache ? &cache->c3 : nullptr);
  h = silu(h, cache ? &cache->a3 : nullptr);
  h = conv4_.forward(h, cache ? &cache->c4 : nullptr);
  return sigmoid(h, cache ? &cache->s4 : nullptr);
}

Tensor DecoderNet::backward(const Tensor& gout, const Cache& cache,
                            std::vector<Tensor>* param_grads) const {
  auto* g = param_grads;
  auto wp = [&](int i) { return g ? &(*g)[i] : nullptr; };
  Tensor gr = sigmoid_backward(gout, cache.s4);
  gr = conv4_.backward(gr, &cache.c4, wp(6), wp(7));
  gr = silu_backward(gr, cache.a3);
  gr = conv3_.backward(gr, &cache.c3, wp(4), wp(5));
  gr = upsample2x_backward(gr);
  gr = silu_backward(gr, cache.a2);
  gr = conv2_.backward(gr, &cache.c2, wp(2), wp(3));
  gr = upsample2x_backward(gr);
  gr = silu_backward(gr, cache.a1);
  return conv1_.backward(gr, &cache.c1, wp(0), wp(1));
}

NamedParams DecoderNet::param_list() {
  return {{"conv1.weight", &conv1_.weight()}, {"conv1.bias", &conv1_.bias()},
          {"conv2.weight", &conv2_.weight()}, {"conv2.bias", &conv2_.bias()},
          {"conv3.weight", &conv3_.weight()}, {"conv3.bias", &conv3_.bias()},
          {"conv4.weight", &conv4_.weight()}, {"conv4.bias", &conv4_.bias()}};
}

NamedParamsConst DecoderNet::param_list() const {
  return to_const(const_cast<DecoderNet*>(this)->param_list());
}

std::vector<Tensor> DecoderNet::zero_param_grads() const { return zeros_like(param_list()); }
std::size_t DecoderNet::param_count() const { return count_params(param_list()); }

// ---------------------------------------------------------------------------
// DenoiserNet
// ---------------------------------------------------------------------------

DenoiserNet::DenoiserNet(const DenoiserArch& arch) : arch_(arch) {
  const int b = arch.base_channels;
  conv_in_ = Conv2d(arch.data_channels, b, 3, 1, 1);
  conv_out_ = Conv2d(b, arch.data_channels, 3, 1, 1);
  t_mlp_ = Dense(arch.time_dim, arch.time_hidden);
  for (Block* blk : {&b1_, &b2_}) {
    blk->conv_a = Conv2d(b, b, 3, 1, 1);
    blk->conv_b = Conv2d(b, b, 3, 1, 1);
    blk->dense_t = Dense(arch.time_hidden, b);
    blk->dense_c = Dense(arch.cond_dim, b);
  }
  class_embed_.resize(1, arch.num_classes, 1, arch.cond_dim);
}

void DenoiserNet::init(Rng& rng) {
  conv_in_.init(rng);
  conv_out_.init(rng);
  t_mlp_.init(rng);
  for (Block* blk : {&b1_, &b2_}) {
    blk->conv_a.init(rng);
    blk->conv_b.init(rng);
    blk->dense_t.init(rng);
    blk->dense_c.init(rng);
  }
  for (std::size_t i = 0; i < class_embed_.numel(); ++i) class_embed_[i] = 0.1 * rng.normal();
  // Zero head: an untrained model predicts eps = 0 exactly.
  conv_out_.weight().set_zero();
  conv_out_.bias().set_zero();
}

Tensor DenoiserNet::forward(const Tensor& z, std::span<const int> t, const Tensor* cond,
                            Cache* cache) const {
  if (z.c() != arch_.data_channels) {
    throw std::invalid_argument("denoiser input channels " + std::to_string(z.c()) +
                                " != " + std::to_string(arch_.data_channels));
  }
  if (static_cast<int>(t.size()) != z.n()) {
    throw std::invalid_argument("denoiser timestep count " + std::to_string(t.size()) +
                                " != batch " + std::to_string(z.n()));
  }
  Tensor cemb;
  if (cond) {
    if (cond->n() != z.n() || cond->c() != arch_.cond_dim) {
      throw std::invalid_argument("condition embedding shape " + cond->shape_str() +
                                  " does not match (batch, cond_dim)");
    }
    cemb = *cond;
  } else {
    cemb = Tensor(z.n(), arch_.cond_dim, 1, 1);
  }

  Tensor temb = sinusoidal_embedding(t, arch_.time_dim);
  temb = t_mlp_.forward(temb, cache ? &cache->t_mlp_in : nullptr);
  temb = silu(temb, cache ? &cache->t_mlp_pre : nullptr);

  Tensor h = conv_in_.forward(z, cache ? &cache->in : nullptr);
  const Block* blocks[2] = {&b1_, &b2_};
  for (int i = 0; i < 2; ++i) {
    const Block& blk = *blocks[i];
    BlockCache* bc = cache ? &cache->blocks[i] : nullptr;
    Tensor u = silu(h, bc ? &bc->pre_a : nullptr);
    u = blk.conv_a.forward(u, bc ? &bc->conv_a : nullptr);
    Tensor tb = blk.dense_t.forward(temb, bc ? &bc->dense_t : nullptr);
    Tensor cb = blk.dense_c.forward(cemb, bc ? &bc->dense_c : nullptr);
    add_channel_bias(u, tb);
    add_channel_bias(u, cb);
    Tensor v = silu(u, bc ? &bc->pre_b : nullptr);
    v = blk.conv_b.forward(v, bc ? &bc->conv_b : nullptr);
    h.add(v);
  }
  Tensor out = silu(h, cache ? &cache->pre_out : nullptr);
  return conv_out_.forward(out, cache ? &cache->conv_out : nullptr);
}

Tensor DenoiserNet::predict(const Tensor& z, std::span<const int> t, const Tensor* cond) const {
  return forward(z, t, cond, nullptr);
}

Tensor DenoiserNet::backward_input(const Tensor& z, std::span<const int> t, const Tensor* cond,
                                   const Tensor& gout) const {
  Cache cache;
  forward(z, t, cond, &cache);
  return backward(gout, cache, nullptr).dz;
}

DenoiserNet::BackwardResult DenoiserNet::backward(const Tensor& gout, const Cache& cache,
                                                  std::vector<Tensor>* param_grads) const {
  // param_list order:
  //  0 conv_in.w 1 conv_in.b 2 t_mlp.w 3 t_mlp.b
  //  4..9   block1 (conv_a w/b, conv_b w/b ... see param_list)
  //  ... class_embed has no gradient here; training scatters dcond itself.
  auto* g = param_grads;
  auto wp = [&](int i) { return g ? &(*g)[i] : nullptr; };

  Tensor gr = conv_out_.backward(gout, &cache.conv_out, wp(20), wp(21));
  gr = silu_backward(gr, cache.pre_out);

  Tensor gtemb;  // accumulated gradient on the shared time embedding
  Tensor gcemb;
  const Block* blocks[2] = {&b1_, &b2_};
  for (int i = 1; i >= 0; --i) {
    const Block& blk = *blocks[i];
    const BlockCache& bc = cache.blocks[i];
    const int base = 4 + 8 * i;
    Tensor gv = blk.conv_b.backward(gr, &bc.conv_b, wp(base + 2), wp(base + 3));
    gv = silu_backward(gv, bc.pre_b);
    Tensor gbias = reduce_channel_bias(gv);
    Tensor gt = blk.dense_t.backward(gbias, &bc.dense_t, wp(base + 4), wp(base + 5));
    Tensor gc = blk.dense_c.backward(gbias, &bc.dense_c, wp(base + 6), wp(base + 7));
    if (gtemb.empty()) gtemb = gt; else gtemb.add(gt);
    if (gcemb.empty()) gcemb = gc; else gcemb.add(gc);
    Tensor ga = blk.conv_a.backward(gv, &bc.conv_a, wp(base + 0), wp(base + 1));
    ga = silu_backward(ga, bc.pre_a);
    gr.add(ga);  // residual skip
  }
  Tensor gth = silu_backward(gtemb, cache.t_mlp_pre);
  t_mlp_.backward(gth, &cache.t_mlp_in, wp(2), wp(3));  // input is t, no grad needed

  BackwardResult res;
  res.dz = conv_in_.backward(gr, &cache.in, wp(0), wp(1));
  res.dcond = std::move(gcemb);
  return res;
}

Tensor DenoiserNet::class_embedding(int label) const {
  if (label < 0 || label >= arch_.num_classes) {
    throw std::invalid_argument("class label " + std::to_string(label) + " outside [0," +
                                std::to_string(arch_.num_classes) + ")");
  }
  Tensor out(1, arch_.cond_dim, 1, 1);
  for (int d = 0; d < arch_.cond_dim; ++d) out[d] = class_embed_.at(0, label, 0, d);
  return out;
}

NamedParams DenoiserNet::param_list() {
  NamedParams p = {{"conv_in.weight", &conv_in_.weight()},
                   {"conv_in.bias", &conv_in_.bias()},
                   {"t_mlp.weight", &t_mlp_.weight()},
                   {"t_mlp.bias", &t_mlp_.bias()}};
  Block* blocks[2] = {&b1_, &b2_};
  for (int i = 0; i < 2; ++i) {
    const std::string pre = "block" + std::to_string(i + 1) + ".";
    p.emplace_back(pre + "conv_a.weight", &blocks[i]->conv_a.weight());
    p.emplace_back(pre + "conv_a.bias", &blocks[i]->conv_a.bias());
    p.emplace_back(pre + "conv_b.weight", &blocks[i]->conv_b.weight());
    p.emplace_back(pre + "conv_b.bias", &blocks[i]->conv_b.bias());
    p.emplace_back(pre + "dense_t.weight", &blocks[i]->dense_t.weight());
    p.emplace_back(pre + "dense_t.bias", &blocks[i]->dense_t.bias());
    p.emplace_back(pre + "dense_c.weight", &blocks[i]->dense_c.weight());
    p.emplace_back(pre + "dense_c.bias", &blocks[i]->dense_c.bias());
  }
  p.emplace_back("conv_out.weight", &conv_out_.weight());
  p.emplace_back("conv_out.bias", &conv_out_.bias());
  p.emplace_back("class_embed", &class_embed_);
  return p;
}

NamedParamsConst DenoiserNet::param_list() const {
  return to_const(const_cast<DenoiserNet*>(this)->param_list());
}

std::vector<Tensor> DenoiserNet::zero_param_grads() const { return zeros_like(param_list()); }
std::size_t DenoiserNet::param_count() const { return count_params(param_list()); }

// ---------------------------------------------------------------------------
// Latent stats
// ---------------------------------------------------------------------------

json LatentStats::to_json() const { return {{"mean", mean}, {"std", std}}; }

LatentStats LatentStats::from_json(const json& j) {
  LatentStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.std.size()) throw std::runtime_error("latent stats length mismatch");
  for (const double v : s.std) {
    if (!(v > 0.0)) throw std::runtime_error("latent stats std must be positive");
  }
  return s;
}

LatentStats compute_latent_stats(const EncoderNet& encoder, const Tensor& images,
                                 int min_images) {
  if (images.n() < min_images) {
    throw std::invalid_argument("latent stats need >= " + std::to_string(min_images) +
                                " images, got " + std::to_string(images.n()));
  }
  const Tensor z = encoder.forward(images, nullptr);
  const int C = z.c();
  const std::size_t per = static_cast<std::size_t>(z.n()) * z.h() * z.w();
  LatentStats s;
  s.mean.assign(C, 0.0);
  s.std.assign(C, 0.0);
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < z.h(); ++y) {
        for (int x = 0; x < z.w(); ++x) s.mean[c] += z.at(n, c, y, x);
      }
    }
  }
  for (int c = 0; c < C; ++c) s.mean[c] /= static_cast<double>(per);
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < z.h(); ++y) {
        for (int x = 0; x < z.w(); ++x) {
          const double d = z.at(n, c, y, x) - s.mean[c];
          s.std[c] += d * d;
        }
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    s.std[c] = std::sqrt(s.std[c] / static_cast<double>(per));
    if (!(s.std[c] > 0.0)) {
      throw std::runtime_error("degenerate latent channel " + std::to_string(c) +
                               ": zero variance");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// LdmBundle
// ---------------------------------------------------------------------------

Tensor LdmBundle::encode(const Tensor& x) const { return encoder.forward(x, nullptr); }

Tensor LdmBundle::decode(const Tensor& z) const {
  Tensor x = decoder.forward(z, nullptr);
  x.clamp(0.0, 1.0);
  return x;
}

Tensor LdmBundle::normalize_latent(const Tensor& z) const {
  if (z.c() != static_cast<int>(latent_stats.mean.size())) {
    throw std::invalid_argument("latent channels do not match stats");
  }
  Tensor out = z;
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < z.c(); ++c) {
      const double m = latent_stats.mean[c], s = latent_stats.std[c];
      for (int y = 0; y < z.h(); ++y) {
        for (int x = 0; x < z.w(); ++x) out.at(n, c, y, x) = (z.at(n, c, y, x) - m) / s;
      }
    }
  }
  return out;
}

Tensor LdmBundle::denormalize_latent(const Tensor& zn) const {
  if (zn.c() != static_cast<int>(latent_stats.mean.size())) {
    throw std::invalid_argument("latent channels do not match stats");
  }
  Tensor out = zn;
  for (int n = 0; n < zn.n(); ++n) {
    for (int c = 0; c < zn.c(); ++c) {
      const double m = latent_stats.mean[c], s = latent_stats.std[c];
      for (int y = 0; y < zn.h(); ++y) {
        for (int x = 0; x < zn.w(); ++x) out.at(n, c, y, x) = zn.at(n, c, y, x) * s + m;
      }
    }
  }
  return out;
}

Tensor LdmBundle::encode_normalized(const Tensor& x) const {
  return normalize_latent(encode(x));
}

Tensor LdmBundle::decode_denormalized(const Tensor& zn) const {
  return decode(denormalize_latent(zn));
}

Tensor LdmBundle::features(const Tensor& x) const {
  const Tensor pooled = avgpool2x2(encode_normalized(x));
  Tensor flat(pooled.n(), pooled.c() * pooled.h() * pooled.w(), 1, 1);
  std::memcpy(flat.data(), pooled.data(), pooled.numel() * sizeof(double));
  return flat;
}

int LdmBundle::feature_dim() const {
  const int zs = ae_arch.image_size / AutoencoderArch::kDownsample;
  return ae_arch.latent_channels * (zs / 2) * (zs / 2);
}

bool LdmBundle::trained() const {
  return meta.is_object() && meta.value("trained", false);
}

void LdmBundle::require_trained() const {
  if (!trained()) {
    throw std::invalid_argument("bundle is not marked trained (meta.trained != true)");
  }
}

Tensor to_signed_range(const Tensor& x) {
  Tensor out = x;
  out.scale(2.0);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= 1.0;
  return out;
}

Tensor from_signed_range(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] + 1.0) * 0.5;
  out.clamp(0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

json TrainHistory::to_json() const {
  return {{"train_loss", train_loss},
          {"val_loss", val_loss},
          {"converged", converged},
          {"final_metric", final_metric}};
}

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<int>& idx) {
  Tensor out(static_cast<int>(idx.size()), src.c(), src.h(), src.w());
  const std::size_t per = src.numel() / src.n();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.data() + i * per, src.data() + static_cast<std::size_t>(idx[i]) * per,
                per * sizeof(double));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int count, double val_fraction,
                                                            Rng& rng) {
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = count - 1; i > 0; --i) {
    std::swap(idx[i], idx[rng.uniform_int(0, i)]);
  }
  const int n_val = std::max(1, static_cast<int>(count * val_fraction));
  std::vector<int> val(idx.begin(), idx.begin() + n_val);
  std::vector<int> train(idx.begin() + n_val, idx.end());
  return {train, val};
}

}  // namespace

TrainHistory train_autoencoder(EncoderNet& enc, DecoderNet& dec, const Dataset& ds,
                               const AeTrainConfig& cfg, std::ostream* log) {
  if (ds.count() < cfg.min_images) {
    throw std::invalid_argument("insufficient data: autoencoder training needs >= " +
                                std::to_string(cfg.min_images) + " images, got " +
                                std::to_string(ds.count()));
  }
  Rng rng(Rng::derive(cfg.seed, "ae_train"));
  auto [train_idx, val_idx] = split_indices(ds.count(), cfg.val_fraction, rng);
  const Tensor val = gather_rows(ds.images, val_idx);

  NamedParams named = enc.param_list();
  {
    NamedParams d = dec.param_list();
    named.insert(named.end(), d.begin(), d.end());
  }
  std::vector<Tensor*> params;
  for (auto& [name, t] : named) params.push_back(t);
  Adam opt(cfg.lr);

  auto val_rmse = [&]() {
    const Tensor recon = dec.forward(enc.forward(val, nullptr), nullptr);
    return rmse(recon, val);
  };

  TrainHistory hist;
  std::vector<Tensor> enc_grads = enc.zero_param_grads();
  std::vector<Tensor> dec_grads = dec.zero_param_grads();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(train_idx.size()) - 1; i > 0; --i) {
      std::swap(train_idx[i], train_idx[rng.uniform_int(0, i)]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t off = 0; off < train_idx.size(); off += cfg.batch_size) {
      const std::size_t end = std::min(off + cfg.batch_size, train_idx.size());
      const std::vector<int> bidx(train_idx.begin() + off, train_idx.begin() + end);
      const Tensor x = gather_rows(ds.images, bidx);

      EncoderNet::Cache ec;
      DecoderNet::Cache dc;
      const Tensor z = enc.forward(x, &ec);
      Tensor recon = dec.forward(z, &dc);

      Tensor diff = recon;
      diff.sub(x);
      const double loss = diff.sq_sum() / static_cast<double>(diff.numel());
      if (!std::isfinite(loss)) {
        throw std::runtime_error("autoencoder training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += loss;
      ++batches;

      Tensor gout = diff;
      gout.scale(2.0 / static_cast<double>(diff.numel()));
      for (auto& t : enc_grads) t.set_zero();
      for (auto& t : dec_grads) t.set_zero();
      const Tensor gz = dec.backward(gout, dc, &dec_grads);
      enc.backward(gz, ec, &enc_grads);

      std::vector<const Tensor*> grads;
      for (const auto& t : enc_grads) grads.push_back(&t);
      for (const auto& t : dec_grads) grads.push_back(&t);
      opt.step(params, grads);
    }
    hist.train_loss.push_back(epoch_loss / std::max(1, batches));
    const double v = val_rmse();
    hist.val_loss.push_back(v);
    if (log) {
      (*log) << "ae epoch " << epoch << " train_mse " << hist.train_loss.back() << " val_rmse "
             << v << "\n";
    }
    if (v <= cfg.target_rmse && epoch >= std::min(9, cfg.epochs - 1)) {
      hist.converged = true;
      hist.final_metric = v;
      return hist;
    }
  }
  hist.final_metric = hist.val_loss.back();
  hist.converged = hist.final_metric <= cfg.target_rmse;
  return hist;
}

TrainHistory train_denoiser(DenoiserNet& dn, const Tensor& data, const std::vector<int>& labels,
                            const NoiseSchedule& schedule, const DmTrainConfig& cfg,
                            std::ostream* log) {
  if (data.n() < 2) throw std::invalid_argument("denoiser training needs >= 2 samples");
  if (!labels.empty() && static_cast<int>(labels.size()) != data.n()) {
    throw std::invalid_argument("labels length does not match data");
  }
  const DenoiserArch& arch = dn.arch();
  Rng rng(Rng::derive(cfg.seed, "dm_train"));
  auto [train_idx, val_idx] = split_indices(data.n(), cfg.val_fraction, rng);
  const Tensor val = gather_rows(data, val_idx);

  // Fixed validation noise/timesteps so the epoch curve is smooth.
  Rng vrng(Rng::derive(cfg.seed, "dm_val"));
  const Tensor val_eps = vrng.normal_like(val);
  std::vector<int> val_t(val.n());
  for (int i = 0; i < val.n(); ++i) {
    val_t[i] = vrng.uniform_int(0, schedule.T - 1);
  }
  Tensor val_zt = val;
  for (int i = 0; i < val.n(); ++i) {
    const double a = std::sqrt(schedule.alpha_bars[val_t[i]]);
    const double b = std::sqrt(1.0 - schedule.alpha_bars[val_t[i]]);
    const std::size_t per = val.numel() / val.n();
    for (std::size_t k = 0; k < per; ++k) {
      val_zt[i * per + k] = a * val[i * per + k] + b * val_eps[i * per + k];
    }
  }
  auto val_loss = [&]() {
    Tensor pred = dn.predict(val_zt, val_t, nullptr);
    pred.sub(val_eps);
    return pred.sq_sum() / static_cast<double>(pred.numel());
  };

  NamedParams named = dn.param_list();
  std::vector<Tensor*> params;
  for (auto& [name, t] : named) params.push_back(t);
  const int embed_slot = static_cast<int>(named.size()) - 1;  // "class_embed" is last
  Adam opt(cfg.lr);

  TrainHistory hist;
  std::vector<Tensor> grads = dn.zero_param_grads();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(train_idx.size()) - 1; i > 0; --i) {
      std::swap(train_idx[i], train_idx[rng.uniform_int(0, i)]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t off = 0; off < train_idx.size(); off += cfg.batch_size) {
      const std::size_t end = std::min(off + cfg.batch_size, train_idx.size());
      const std::vector<int> bidx(train_idx.begin() + off, train_idx.begin() + end);
      const Tensor z0 = gather_rows(data, bidx);
      const int B = z0.n();

      std::vector<int> t(B);
      for (int i = 0; i < B; ++i) t[i] = rng.uniform_int(0, schedule.T - 1);
      const Tensor eps = rng.normal_like(z0);
      Tensor zt = z0;
      const std::size_t per = z0.numel() / B;
      for (int i = 0; i < B; ++i) {
        const double a = std::sqrt(schedule.alpha_bars[t[i]]);
        const double b = std::sqrt(1.0 - schedule.alpha_bars[t[i]]);
        for (std::size_t k = 0; k < per; ++k) {
          zt[i * per + k] = a * z0[i * per + k] + b * eps[i * per + k];
        }
      }

      // Conditioning rows, with dropout to keep the unconditional path trained.
      Tensor cond(B, arch.cond_dim, 1, 1);
      std::vector<int> cond_label(B, -1);
      if (!labels.empty()) {
        for (int i = 0; i < B; ++i) {
          if (rng.uniform() < cfg.cond_dropout) continue;
          cond_label[i] = labels[bidx[i]];
          const Tensor row = dn.class_embedding(cond_label[i]);
          for (int d = 0; d < arch.cond_dim; ++d) cond.at(i, d, 0, 0) = row[d];
        }
      }

      DenoiserNet::Cache cache;
      Tensor pred = dn.forward(zt, t, &cond, &cache);
      Tensor diff = pred;
      diff.sub(eps);
      const double loss = diff.sq_sum() / static_cast<double>(diff.numel());
      if (!std::isfinite(loss)) {
        throw std::runtime_error("denoiser training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      epoch_loss += loss;
      ++batches;

      Tensor gout = diff;
      gout.scale(2.0 / static_cast<double>(diff.numel()));
      for (auto& t2 : grads) t2.set_zero();
      const DenoiserNet::BackwardResult back = dn.backward(gout, cache, &grads);
      // Scatter condition gradients into the embedding-table grad slot.
      for (int i = 0; i < B; ++i) {
        if (cond_label[i] < 0) continue;
        for (int d = 0; d < arch.cond_dim; ++d) {
          grads[embed_slot].at(0, cond_label[i], 0, d) += back.dcond.at(i, d, 0, 0);
        }
      }

      std::vector<const Tensor*> gptr;
      for (const auto& t2 : grads) gptr.push_back(&t2);
      opt.step(params, gptr);
    }
    hist.train_loss.push_back(epoch_loss / std::max(1, batches));
    hist.val_loss.push_back(val_loss());
    if (log) {
      (*log) << "dm epoch " << epoch << " train " << hist.train_loss.back() << " val "
             << hist.val_loss.back() << "\n";
    }
  }
  hist.final_metric = hist.val_loss.back();
  hist.converged = hist.val_loss.back() < hist.val_loss.front();
  return hist;
}

}  // namespace latentshield
