#pragma once

#include <filesystem>

#include "elite360/image.hpp"

namespace e360 {

// 8-bit PNG. Reading yields 1 (gray) or 3 (RGB) channels scaled to [0, 1];
// alpha is dropped. Writing clamps to [0, 1] and rounds to the nearest level.
ImageF read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageF& img);

// Portable float map: "Pf" (1 channel) or "PF" (3 channels). Written in
// little-endian (scale -1.0) with rows stored bottom-to-top; both
// endiannesses are accepted on read.
ImageF read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const ImageF& img);

// Nonzero pixels of a single-channel PNG or PFM are valid.
ValidMask read_mask(const std::filesystem::path& path);
ValidMask mask_from_image(const ImageF& img);

}  // namespace e360
