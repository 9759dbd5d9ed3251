#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pixmatch/image.hpp"

namespace pixmatch {

/// Decoded 8-bit PNG. `channels` is 1 (gray) or 3 (RGB); pixels are interleaved.
struct Png8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Png8& png);
/// Reads an 8-bit gray or RGB PNG; other formats are rejected with IoError naming the file.
Png8 read_png(const std::filesystem::path& path);

/// Quantizes [0,1] values to round(v*255).
Png8 image_to_png(const Image& image);
Image png_to_image(const Png8& png);

void write_image_png(const std::filesystem::path& path, const Image& image);
Image read_image_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_png(const std::filesystem::path& path);

}  // namespace pixmatch
