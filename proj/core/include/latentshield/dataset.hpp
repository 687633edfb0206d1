#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latentshield/tensor.hpp"

namespace latentshield {

/// Procedural image families. The family index doubles as the class label.
enum class ImageFamily { blobs = 0, stripes = 1, shapes = 2, waves = 3 };
constexpr int kNumFamilies = 4;

std::string family_name(ImageFamily f);

struct DatasetSpec {
  int count = 512;
  int image_size = 32;
  int channels = 3;          // 1 or 3
  std::uint64_t seed = 1234;
  std::string style = "base";  // "base" or "alt": shifts palettes/geometry
};

struct Dataset {
  Tensor images;            // (count, channels, size, size), values in [0,1]
  std::vector<int> labels;  // family per image
  DatasetSpec spec;

  int count() const { return images.n(); }
};

/// Renders one image; deterministic given the rng state.
Tensor render_family_image(ImageFamily f, int size, int channels, Rng& rng,
                           const std::string& style);

/// Images are generated per-index from derived seeds, so any subset is
/// reproducible independently of iteration order.
Dataset make_dataset(const DatasetSpec& spec);

/// Writes PNGs plus a manifest.json (files, labels, spec, content hash).
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Stable content hash over pixel bytes + labels (for cache keys).
std::uint64_t dataset_hash(const Dataset& ds);

}  // namespace latentshield
