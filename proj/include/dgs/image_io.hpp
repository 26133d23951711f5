#pragma once

#include <filesystem>

#include "dgs/raster.hpp"

namespace dgs {

/// 8-bit binary PPM (P6) from a 3-channel image with values in [0, 1].
void write_ppm(const RasterImage& img, const std::filesystem::path& path);
RasterImage read_ppm(const std::filesystem::path& path);

/// 8-bit binary PGM (P5) from channel 0.
void write_pgm(const RasterImage& img, const std::filesystem::path& path);
RasterImage read_pgm(const std::filesystem::path& path);

/// Flat float32 raster: 16-byte header ("DGSR", u32 width, u32 height,
/// u32 channels) followed by row-major interleaved values.
void write_float_raster(const RasterImage& img, const std::filesystem::path& path);
RasterImage read_float_raster(const std::filesystem::path& path);

}  // namespace dgs
