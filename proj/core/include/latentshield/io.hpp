#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "latentshield/tensor.hpp"

namespace latentshield {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Raw files
// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`, so readers never
/// observe a half-written file.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

json read_json_file(const std::filesystem::path& path);
void write_json_atomic(const std::filesystem::path& path, const json& j, int indent = 2);

// ---------------------------------------------------------------------------
// Images: 8-bit PNG. Tensors hold [0,1] doubles; c must be 1 or 3.
// ---------------------------------------------------------------------------

Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& image);

// ---------------------------------------------------------------------------
// NumPy arrays (.npy v1.0). Written as little-endian float64, shape
// (n, c, h, w); reads accept float32 or float64, 1..4 dims (missing leading
// dims become 1).
// ---------------------------------------------------------------------------

Tensor read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const Tensor& t);

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64-bit) for stage caching and manifests.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hex_u64(std::uint64_t v);

}  // namespace latentshield
