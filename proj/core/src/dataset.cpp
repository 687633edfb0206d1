#include "latentshield/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "latentshield/io.hpp"

namespace latentshield {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Rgb {
  double r, g, b;
};

// Small palettes; the "alt" style rotates hues and flips contrast so the two
// dataset variants are visually distinct but equally learnable.
Rgb pick_color(Rng& rng, const std::string& style) {
  const double h = rng.uniform();
  const double base = style == "alt" ? 0.25 : 0.75;
  Rgb c;
  c.r = 0.5 + 0.5 * std::sin(2.0 * kPi * (h + 0.00)) * base;
  c.g = 0.5 + 0.5 * std::sin(2.0 * kPi * (h + 0.33)) * base;
  c.b = 0.5 + 0.5 * std::sin(2.0 * kPi * (h + 0.67)) * base;
  return c;
}

void paint(Tensor& img, int y, int x, const Rgb& c, double alpha) {
  if (img.c() == 1) {
    const double g = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
    img.at(0, 0, y, x) = (1.0 - alpha) * img.at(0, 0, y, x) + alpha * g;
    return;
  }
  img.at(0, 0, y, x) = (1.0 - alpha) * img.at(0, 0, y, x) + alpha * c.r;
  img.at(0, 1, y, x) = (1.0 - alpha) * img.at(0, 1, y, x) + alpha * c.g;
  img.at(0, 2, y, x) = (1.0 - alpha) * img.at(0, 2, y, x) + alpha * c.b;
}

void fill_background(Tensor& img, const Rgb& c) {
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) paint(img, y, x, c, 1.0);
  }
}

void render_blobs(Tensor& img, Rng& rng, const std::string& style) {
  fill_background(img, pick_color(rng, style));
  const int n = 2 + rng.uniform_int(0, 2);
  const int s = img.h();
  for (int i = 0; i < n; ++i) {
    const double cy = rng.uniform(0.15, 0.85) * s;
    const double cx = rng.uniform(0.15, 0.85) * s;
    const double rad = rng.uniform(0.10, 0.28) * s;
    const Rgb col = pick_color(rng, style);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        const double a = std::exp(-d2 / (2.0 * rad * rad));
        if (a > 0.01) paint(img, y, x, col, a);
      }
    }
  }
}

void render_stripes(Tensor& img, Rng& rng, const std::string& style) {
  const Rgb a = pick_color(rng, style);
  const Rgb b = pick_color(rng, style);
  const double angle = rng.uniform(0.0, kPi);
  const double freq = rng.uniform(2.0, 5.0) * (style == "alt" ? 1.4 : 1.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double dy = std::sin(angle), dx = std::cos(angle);
  const int s = img.h();
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double u = (y * dy + x * dx) / s;
      const double m = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * u + phase);
      const Rgb mix{a.r * m + b.r * (1 - m), a.g * m + b.g * (1 - m), a.b * m + b.b * (1 - m)};
      paint(img, y, x, mix, 1.0);
    }
  }
}

void render_shapes(Tensor& img, Rng& rng, const std::string& style) {
  fill_background(img, pick_color(rng, style));
  const int s = img.h();
  const int n = 1 + rng.uniform_int(0, 1);
  for (int i = 0; i < n; ++i) {
    const bool circle = rng.uniform() < (style == "alt" ? 0.25 : 0.75);
    const double cy = rng.uniform(0.25, 0.75) * s;
    const double cx = rng.uniform(0.25, 0.75) * s;
    const double half = rng.uniform(0.12, 0.30) * s;
    const Rgb col = pick_color(rng, style);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double d;
        if (circle) {
          d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx)) - half;
        } else {
          d = std::max(std::abs(y - cy), std::abs(x - cx)) - half;
        }
        // one-pixel soft edge keeps gradients sane for the autoencoder
        const double alpha = std::clamp(0.5 - d, 0.0, 1.0);
        if (alpha > 0.0) paint(img, y, x, col, alpha);
      }
    }
  }
}

void render_waves(Tensor& img, Rng& rng, const std::string& style) {
  const Rgb a = pick_color(rng, style);
  const Rgb b = pick_color(rng, style);
  const double fy = rng.uniform(1.0, 3.0);
  const double fx = rng.uniform(1.0, 3.0);
  const double py = rng.uniform(0.0, 2.0 * kPi);
  const double px = rng.uniform(0.0, 2.0 * kPi);
  const double warp = rng.uniform(0.5, 2.0) * (style == "alt" ? 2.0 : 1.0);
  const int s = img.h();
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double u =
          std::sin(2.0 * kPi * fy * y / s + py + warp * std::sin(2.0 * kPi * fx * x / s + px));
      const double m = 0.5 + 0.5 * u;
      const Rgb mix{a.r * m + b.r * (1 - m), a.g * m + b.g * (1 - m), a.b * m + b.b * (1 - m)};
      paint(img, y, x, mix, 1.0);
    }
  }
}

}  // namespace

std::string family_name(ImageFamily f) {
  switch (f) {
    case ImageFamily::blobs: return "blobs";
    case ImageFamily::stripes: return "stripes";
    case ImageFamily::shapes: return "shapes";
    case ImageFamily::waves: return "waves";
  }
  throw std::logic_error("bad family");
}

Tensor render_family_image(ImageFamily f, int size, int channels, Rng& rng,
                           const std::string& style) {
  if (size < 8) throw std::invalid_argument("image size too small: " + std::to_string(size));
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("channels must be 1 or 3");
  }
  Tensor img(1, channels, size, size);
  switch (f) {
    case ImageFamily::blobs: render_blobs(img, rng, style); break;
    case ImageFamily::stripes: render_stripes(img, rng, style); break;
    case ImageFamily::shapes: render_shapes(img, rng, style); break;
    case ImageFamily::waves: render_waves(img, rng, style); break;
  }
  img.clamp(0.0, 1.0);
  return img;
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (spec.style != "base" && spec.style != "alt") {
    throw std::invalid_argument("unknown dataset style: " + spec.style);
  }
  Dataset ds;
  ds.spec = spec;
  ds.images.resize(spec.count, spec.channels, spec.image_size, spec.image_size);
  ds.labels.resize(spec.count);
  const std::uint64_t root = Rng::derive(spec.seed, "dataset/" + spec.style);
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(Rng::derive(root, "img" + std::to_string(i)));
    const ImageFamily f = static_cast<ImageFamily>(i % kNumFamilies);
    const Tensor img = render_family_image(f, spec.image_size, spec.channels, rng, spec.style);
    std::memcpy(ds.images.data() + static_cast<std::size_t>(i) * img.numel(), img.data(),
                img.numel() * sizeof(double));
    ds.labels[i] = static_cast<int>(f);
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (int i = 0; i < ds.count(); ++i) {
    char name[48];
    std::snprintf(name, sizeof(name), "img_%05d_%s.png", i,
                  family_name(static_cast<ImageFamily>(ds.labels[i])).c_str());
    write_png(dir / name, ds.images.slice_sample(i));
    files.push_back({{"file", name}, {"label", ds.labels[i]}});
  }
  json manifest = {
      {"kind", "dataset"},
      {"count", ds.count()},
      {"image_size", ds.spec.image_size},
      {"channels", ds.spec.channels},
      {"seed", ds.spec.seed},
      {"style", ds.spec.style},
      {"content_hash", hex_u64(dataset_hash(ds))},
      {"items", files},
  };
  write_json_atomic(dir / "manifest.json", manifest);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("kind", "") != "dataset") {
    throw std::runtime_error("not a dataset manifest: " + (dir / "manifest.json").string());
  }
  Dataset ds;
  ds.spec.count = manifest.at("count").get<int>();
  ds.spec.image_size = manifest.at("image_size").get<int>();
  ds.spec.channels = manifest.at("channels").get<int>();
  ds.spec.seed = manifest.at("seed").get<std::uint64_t>();
  ds.spec.style = manifest.at("style").get<std::string>();
  const auto& items = manifest.at("items");
  ds.images.resize(ds.spec.count, ds.spec.channels, ds.spec.image_size, ds.spec.image_size);
  ds.labels.resize(ds.spec.count);
  if (static_cast<int>(items.size()) != ds.spec.count) {
    throw std::runtime_error("dataset manifest count mismatch");
  }
  for (int i = 0; i < ds.spec.count; ++i) {
    const Tensor img = read_png(dir / items[i].at("file").get<std::string>());
    if (img.c() != ds.spec.channels || img.h() != ds.spec.image_size ||
        img.w() != ds.spec.image_size) {
      throw std::runtime_error("dataset image shape mismatch at index " + std::to_string(i));
    }
    std::memcpy(ds.images.data() + static_cast<std::size_t>(i) * img.numel(), img.data(),
                img.numel() * sizeof(double));
    ds.labels[i] = items[i].at("label").get<int>();
  }
  return ds;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::string bytes;
  bytes.reserve(ds.images.numel() + ds.labels.size());
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    bytes.push_back(static_cast<char>(std::lround(std::clamp(ds.images[i], 0.0, 1.0) * 255.0)));
  }
  for (const int l : ds.labels) bytes.push_back(static_cast<char>(l));
  return fnv1a64(bytes);
}

}  // namespace latentshield
