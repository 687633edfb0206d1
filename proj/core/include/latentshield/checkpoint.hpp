#pragma once

#include <filesystem>

#include "latentshield/models.hpp"

namespace latentshield {

/// Binary container: magic "LSCP", u32 format version, u64 header length,
/// JSON header (arch, schedule, stats, meta, tensor index), then a raw
/// little-endian float32 parameter blob. Parameters round-trip bitwise
/// because values are quantized to float32 once, at save time.
void save_bundle(const std::filesystem::path& path, const LdmBundle& bundle);
LdmBundle load_bundle(const std::filesystem::path& path);

void save_pixel_bundle(const std::filesystem::path& path, const PixelDmBundle& bundle);
PixelDmBundle load_pixel_bundle(const std::filesystem::path& path);

/// "ldm_bundle" or "pixel_dm" without loading parameters.
std::string peek_checkpoint_kind(const std::filesystem::path& path);

}  // namespace latentshield
