#pragma once
// Binary PPM (P6, 3 channels) / PGM (P5, 1 channel) with maxval 255.

#include <filesystem>
#include <string>

#include "kdbd/data.hpp"

namespace kdbd::data {

/// Pixels are quantized with round(v * 255).
std::string encode_ppm(const Image& image);
Image decode_ppm(const std::string& bytes);

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace kdbd::data
