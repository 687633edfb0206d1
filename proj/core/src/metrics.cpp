#include "latentshield/metrics.hpp"

#include <jpeglib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace latentshield {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  if (a.n() != 1) throw std::invalid_argument("ssim expects single images");
  constexpr int win = 7;
  if (a.h() < win || a.w() < win) {
    throw std::invalid_argument("ssim needs images >= 7x7");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  constexpr int np = win * win;
  const double cov_norm = static_cast<double>(np) / (np - 1);

  double total = 0.0;
  long long count = 0;
  for (int c = 0; c < a.c(); ++c) {
    for (int y = 0; y + win <= a.h(); ++y) {
      for (int x = 0; x + win <= a.w(); ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < win; ++dy) {
          for (int dx = 0; dx < win; ++dx) {
            const double va = a.at(0, c, y + dy, x + dx);
            const double vb = b.at(0, c, y + dy, x + dx);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / np, mb = sb / np;
        const double va = cov_norm * (saa / np - ma * ma);
        const double vb = cov_norm * (sbb / np - mb * mb);
        const double cab = cov_norm * (sab / np - ma * mb);
        const double num = (2 * ma * mb + c1) * (2 * cab + c2);
        const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// Feature metrics
// ---------------------------------------------------------------------------

double feature_distance_vec(const Tensor& fa, const Tensor& fb) {
  if (fa.numel() != fb.numel()) throw std::invalid_argument("feature length mismatch");
  const double na = std::sqrt(fa.sq_sum());
  const double nb = std::sqrt(fb.sq_sum());
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return std::sqrt(2.0);
  double d2 = 0.0;
  for (std::size_t i = 0; i < fa.numel(); ++i) {
    const double d = fa[i] / na - fb[i] / nb;
    d2 += d * d;
  }
  return std::sqrt(d2);
}

double cosine_vec(const Tensor& fa, const Tensor& fb) {
  if (fa.numel() != fb.numel()) throw std::invalid_argument("feature length mismatch");
  const double na = std::sqrt(fa.sq_sum());
  const double nb = std::sqrt(fb.sq_sum());
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(fa, fb) / (na * nb), -1.0, 1.0);
}

double feature_distance(const Tensor& a, const Tensor& b, const LdmBundle& bundle) {
  return feature_distance_vec(bundle.features(a), bundle.features(b));
}

double ia_score(const Tensor& a, const Tensor& b, const LdmBundle& bundle) {
  return cosine_vec(bundle.features(a), bundle.features(b));
}

// ---------------------------------------------------------------------------
// High-frequency energy (direct DFT; images are tiny)
// ---------------------------------------------------------------------------

double high_frequency_energy(const Tensor& x, double cutoff) {
  if (x.n() != 1) throw std::invalid_argument("high_frequency_energy expects a single image");
  const int H = x.h(), W = x.w();
  double total = 0.0, high = 0.0, dc = 0.0;
  std::vector<std::complex<double>> row_fft(static_cast<std::size_t>(H) * W);
  for (int c = 0; c < x.c(); ++c) {
    // Separable DFT: rows then columns.
    for (int y = 0; y < H; ++y) {
      for (int u = 0; u < W; ++u) {
        std::complex<double> s = 0.0;
        for (int xx = 0; xx < W; ++xx) {
          const double ang = -2.0 * 3.14159265358979323846 * u * xx / W;
          s += x.at(0, c, y, xx) * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        row_fft[static_cast<std::size_t>(y) * W + u] = s;
      }
    }
    for (int u = 0; u < W; ++u) {
      for (int v = 0; v < H; ++v) {
        std::complex<double> s = 0.0;
        for (int yy = 0; yy < H; ++yy) {
          const double ang = -2.0 * 3.14159265358979323846 * v * yy / H;
          s += row_fft[static_cast<std::size_t>(yy) * W + u] *
               std::complex<double>(std::cos(ang), std::sin(ang));
        }
        if (u == 0 && v == 0) {  // DC carries no structure information
          dc += std::norm(s);
          continue;
        }
        const double fu = static_cast<double>(std::min(u, W - u)) / (W / 2.0);
        const double fv = static_cast<double>(std::min(v, H - v)) / (H / 2.0);
        const double r = std::sqrt(fu * fu + fv * fv);
        const double p = std::norm(s);
        total += p;
        if (r > cutoff) high += p;
      }
    }
  }
  // For a constant image every non-DC coefficient is analytically zero; what
  // the direct DFT leaves behind is rounding noise, not structure.
  if (total <= 1e-12 * dc || total <= 0.0) return 0.0;
  return high / total;
}

// ---------------------------------------------------------------------------
// Fréchet feature distance
// ---------------------------------------------------------------------------

GaussianMoments fit_moments(const Tensor& features) {
  const int n = features.n();
  const int d = static_cast<int>(features.numel() / n);
  if (n < 2) throw std::invalid_argument("fit_moments needs >= 2 samples");
  GaussianMoments m;
  m.dim = d;
  m.mean.assign(d, 0.0);
  m.cov.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m.mean[j] += features[static_cast<std::size_t>(i) * d + j];
  }
  for (int j = 0; j < d; ++j) m.mean[j] /= n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double dj = features[static_cast<std::size_t>(i) * d + j] - m.mean[j];
      for (int k = j; k < d; ++k) {
        const double dk = features[static_cast<std::size_t>(i) * d + k] - m.mean[k];
        m.cov[static_cast<std::size_t>(j) * d + k] += dj * dk;
      }
    }
  }
  for (int j = 0; j < d; ++j) {
    for (int k = j; k < d; ++k) {
      const double v = m.cov[static_cast<std::size_t>(j) * d + k] / (n - 1);
      m.cov[static_cast<std::size_t>(j) * d + k] = v;
      m.cov[static_cast<std::size_t>(k) * d + j] = v;
    }
  }
  return m;
}

double frechet_from_moments(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.dim != b.dim) throw std::invalid_argument("moment dimensionality mismatch");
  const int d = a.dim;
  using Mat = Eigen::MatrixXd;
  Eigen::Map<const Mat> ca(a.cov.data(), d, d);
  Eigen::Map<const Mat> cb(b.cov.data(), d, d);

  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }

  // tr((Sa Sb)^{1/2}) via the symmetric form sqrt(Sa) Sb sqrt(Sa).
  Eigen::SelfAdjointEigenSolver<Mat> es_a(ca);
  if (es_a.info() != Eigen::Success) throw std::runtime_error("covariance eigensolve failed");
  Mat vals = es_a.eigenvalues();
  for (int i = 0; i < d; ++i) vals(i) = std::sqrt(std::max(0.0, vals(i)));
  const Mat sqrt_a = es_a.eigenvectors() * vals.asDiagonal() * es_a.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es_m(sqrt_a * cb * sqrt_a);
  if (es_m.info() != Eigen::Success) throw std::runtime_error("covariance eigensolve failed");
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(0.0, es_m.eigenvalues()(i)));

  const double value = mean_term + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);  // clip numerical negatives near zero
}

double frechet_from_features(const Tensor& fa, const Tensor& fb) {
  return frechet_from_moments(fit_moments(fa), fit_moments(fb));
}

double frechet_feature_distance(const Tensor& images_a, const Tensor& images_b,
                                const LdmBundle& bundle, int min_count) {
  if (images_a.n() < min_count || images_b.n() < min_count) {
    throw std::invalid_argument("frechet_feature_distance needs >= " +
                                std::to_string(min_count) + " images per set, got " +
                                std::to_string(images_a.n()) + " and " +
                                std::to_string(images_b.n()));
  }
  return frechet_from_features(bundle.features(images_a), bundle.features(images_b));
}

// ---------------------------------------------------------------------------
// JPEG purification
// ---------------------------------------------------------------------------

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

}  // namespace

Tensor purify_jpeg(const Tensor& x, int quality) {
  if (x.n() != 1 || (x.c() != 1 && x.c() != 3)) {
    throw std::invalid_argument("purify_jpeg expects (1,{1|3},h,w), got " + x.shape_str());
  }
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("jpeg quality must be in [1,100]");
  }
  const int c = x.c(), h = x.h(), w = x.w();
  std::vector<unsigned char> pixels(static_cast<std::size_t>(h) * w * c);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        pixels[(static_cast<std::size_t>(y) * w + xx) * c + ch] = static_cast<unsigned char>(
            std::lround(std::clamp(x.at(0, ch, y, xx), 0.0, 1.0) * 255.0));
      }
    }
  }

  // Compress.
  jpeg_compress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buf) free(buf);
    throw std::runtime_error("jpeg compression failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = c;
  cinfo.in_color_space = c == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * c;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  // Decompress.
  jpeg_decompress_struct dinfo;
  JpegErrorMgr derr;
  dinfo.err = jpeg_std_error(&derr.pub);
  derr.pub.error_exit = jpeg_error_exit;
  if (setjmp(derr.jump)) {
    jpeg_destroy_decompress(&dinfo);
    free(buf);
    throw std::runtime_error("jpeg decompression failed");
  }
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, buf, buf_size);
  jpeg_read_header(&dinfo, TRUE);
  dinfo.out_color_space = c == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&dinfo);
  std::vector<unsigned char> out_pixels(static_cast<std::size_t>(h) * w * c);
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW row = out_pixels.data() + static_cast<std::size_t>(dinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&dinfo, &row, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  free(buf);

  Tensor out(1, c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        out.at(0, ch, y, xx) =
            out_pixels[(static_cast<std::size_t>(y) * w + xx) * c + ch] / 255.0;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crop-resize purification
// ---------------------------------------------------------------------------

namespace {

/// Bilinear resize with the half-pixel center convention; exact identity when
/// sizes match.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  Tensor out(x.n(), x.c(), out_h, out_w);
  const double sy = static_cast<double>(x.h()) / out_h;
  const double sx = static_cast<double>(x.w()) / out_w;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, x.h() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, x.h() - 1);
        const double wy = fy - y0;
        for (int xx = 0; xx < out_w; ++xx) {
          const double fx = std::clamp((xx + 0.5) * sx - 0.5, 0.0, x.w() - 1.0);
          const int x0 = static_cast<int>(fx);
          const int x1 = std::min(x0 + 1, x.w() - 1);
          const double wx = fx - x0;
          const double v = (1 - wy) * ((1 - wx) * x.at(n, c, y0, x0) + wx * x.at(n, c, y0, x1)) +
                           wy * ((1 - wx) * x.at(n, c, y1, x0) + wx * x.at(n, c, y1, x1));
          out.at(n, c, y, xx) = v;
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor purify_crop_resize(const Tensor& x, double crop_frac) {
  if (crop_frac < 0.0 || crop_frac >= 1.0) {
    throw std::invalid_argument("crop_frac must be in [0,1)");
  }
  const int h = x.h(), w = x.w();
  const int kh = std::max(2, static_cast<int>(std::lround(h * (1.0 - crop_frac))));
  const int kw = std::max(2, static_cast<int>(std::lround(w * (1.0 - crop_frac))));
  if (kh == h && kw == w) return x;
  const int oy = (h - kh) / 2;
  const int ox = (w - kw) / 2;
  Tensor crop(x.n(), x.c(), kh, kw);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < kh; ++y) {
        for (int xx = 0; xx < kw; ++xx) {
          crop.at(n, c, y, xx) = x.at(n, c, oy + y, ox + xx);
        }
      }
    }
  }
  return resize_bilinear(crop, h, w);
}

// ---------------------------------------------------------------------------
// Bilateral smoothing purification
// ---------------------------------------------------------------------------

Tensor purify_smooth(const Tensor& x, const SmoothParams& params) {
  if (params.radius < 1) throw std::invalid_argument("smooth radius must be >= 1");
  if (!(params.sigma_spatial > 0.0) || !(params.sigma_range > 0.0)) {
    throw std::invalid_argument("smooth sigmas must be positive");
  }
  const int r = params.radius;
  const double inv_ss = 1.0 / (2.0 * params.sigma_spatial * params.sigma_spatial);
  const double inv_sr = 1.0 / (2.0 * params.sigma_range * params.sigma_range);
  Tensor out = x;
  for (int n = 0; n < x.n(); ++n) {
    for (int y = 0; y < x.h(); ++y) {
      for (int xx = 0; xx < x.w(); ++xx) {
        double wsum = 0.0;
        std::vector<double> acc(x.c(), 0.0);
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= x.h()) continue;
          for (int dx = -r; dx <= r; ++dx) {
            const int xn = xx + dx;
            if (xn < 0 || xn >= x.w()) continue;
            double range2 = 0.0;
            for (int c = 0; c < x.c(); ++c) {
              const double d = x.at(n, c, yy, xn) - x.at(n, c, y, xx);
              range2 += d * d;
            }
            const double wgt =
                std::exp(-(dy * dy + dx * dx) * inv_ss) * std::exp(-range2 * inv_sr);
            wsum += wgt;
            for (int c = 0; c < x.c(); ++c) acc[c] += wgt * x.at(n, c, yy, xn);
          }
        }
        for (int c = 0; c < x.c(); ++c) out.at(n, c, y, xx) = acc[c] / wsum;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

std::string format_value(double v) { return csv_number(v); }

}  // namespace

std::string MetricsReport::to_csv() const {
  std::string out = "image_id,method,metric,strength,value\n";
  for (const MetricRow& r : rows) {
    out += r.image_id;
    out += ',';
    out += r.method;
    out += ',';
    out += r.metric;
    out += ',';
    out += format_value(r.strength);
    out += ',';
    out += format_value(r.value);
    out += '\n';
  }
  return out;
}

json MetricsReport::summary(int min_samples) const {
  // Cell key -> (sum, count). std::map keeps output ordering deterministic.
  std::map<std::string, std::pair<double, int>> cells;
  std::map<std::string, MetricRow> proto;
  for (const MetricRow& r : rows) {
    const std::string key = r.method + "|" + r.metric + "|" + format_value(r.strength);
    cells[key].first += r.value;
    cells[key].second += 1;
    proto.emplace(key, r);
  }
  json out = json::array();
  for (const auto& [key, sc] : cells) {
    const MetricRow& p = proto.at(key);
    out.push_back({{"method", p.method},
                   {"metric", p.metric},
                   {"strength", p.strength},
                   {"mean", sc.first / sc.second},
                   {"count", sc.second},
                   {"underfilled", sc.second < min_samples}});
  }
  return out;
}

MetricsReport build_report(const EvalInputs& inputs, const LdmBundle& bundle,
                           const std::vector<std::string>& metric_set) {
  auto enabled = [&](const std::string& m) {
    return metric_set.empty() ||
           std::find(metric_set.begin(), metric_set.end(), m) != metric_set.end();
  };
  const int n = static_cast<int>(inputs.ids.size());
  if (inputs.clean.n() != n) {
    throw std::invalid_argument("build_report: ids/images count mismatch");
  }
  MetricsReport rep;

  // Perturbation quality: protected vs clean input.
  for (const auto& [method, batch] : inputs.protected_images) {
    if (batch.n() != n) {
      throw std::invalid_argument("build_report: batch size mismatch for " + method);
    }
    for (int i = 0; i < n; ++i) {
      const Tensor a = batch.slice_sample(i);
      const Tensor b = inputs.clean.slice_sample(i);
      if (enabled("ssim")) {
        rep.rows.push_back({inputs.ids[i], method, "ssim", 0.0, ssim(a, b)});
      }
      if (enabled("psnr")) {
        rep.rows.push_back({inputs.ids[i], method, "psnr", 0.0, psnr(a, b)});
      }
      if (enabled("feature_distance")) {
        rep.rows.push_back(
            {inputs.ids[i], method, "feature_distance", 0.0, feature_distance(a, b, bundle)});
      }
    }
  }

  // Protection strength: edited-protected vs edited-clean, per strength.
  const auto clean_edits = inputs.edited.find("clean");
  for (const auto& [method, by_strength] : inputs.edited) {
    if (method == "clean") continue;
    for (const auto& [strength, batch] : by_strength) {
      if (clean_edits == inputs.edited.end() ||
          !clean_edits->second.count(strength)) {
        throw std::invalid_argument("build_report: missing clean edit at strength " +
                                    format_value(strength));
      }
      const Tensor& base = clean_edits->second.at(strength);
      if (batch.n() != n || base.n() != n) {
        throw std::invalid_argument("build_report: edited batch size mismatch");
      }
      for (int i = 0; i < n; ++i) {
        const Tensor a = batch.slice_sample(i);
        const Tensor b = base.slice_sample(i);
        if (enabled("ia_score")) {
          rep.rows.push_back({inputs.ids[i], method, "ia_score", strength, ia_score(a, b, bundle)});
        }
        if (enabled("feature_distance")) {
          rep.rows.push_back({inputs.ids[i], method, "feature_distance", strength,
                              feature_distance(a, b, bundle)});
        }
        if (enabled("psnr")) {
          rep.rows.push_back({inputs.ids[i], method, "psnr", strength, psnr(a, b)});
        }
      }
      if (enabled("frechet_feature_distance") && n >= 2) {
        rep.rows.push_back({"__set__", method, "frechet_feature_distance", strength,
                            frechet_from_features(bundle.features(batch),
                                                  bundle.features(base))});
      }
    }
  }
  return rep;
}

}  // namespace latentshield
