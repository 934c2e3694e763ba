#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "eatseg/tensor.hpp"

namespace eatseg::io {

/// Greyscale PNG (1-16 bit, palette and alpha stripped) as unsigned samples.
Plane<std::uint16_t> read_png_gray(const std::filesystem::path& path);

void write_png_gray8(const std::filesystem::path& path, const Plane<std::uint8_t>& img);
void write_png_gray16(const std::filesystem::path& path, const Plane<std::uint16_t>& img);

/// Interleaved 8-bit RGB, row-major.
void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);

/// Flat 16-bit little-endian signed samples; the file carries no dimensions.
HuPlane read_raw_i16(const std::filesystem::path& path, int rows, int cols);
void write_raw_i16(const std::filesystem::path& path, const HuPlane& img);

}  // namespace eatseg::io
