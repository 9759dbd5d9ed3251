#include "pixmatch/png_io.hpp"

#include <png.h>

#include <cmath>
#include <algorithm>

#include "pixmatch/errors.hpp"

namespace pixmatch {

void write_png(const std::filesystem::path& path, const Png8& png) {
  if (png.channels != 1 && png.channels != 3) throw IoError(path.string() + ": unsupported channel count");
  if (png.pixels.size() != png.height * png.width * png.channels) {
    throw IoError(path.string() + ": pixel buffer size mismatch");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(png.width);
  image.height = static_cast<png_uint_32>(png.height);
  image.format = png.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto stride = static_cast<png_int_32>(png.width * png.channels);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, png.pixels.data(), stride, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path.string() + ": " + msg);
  }
}

Png8 read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path.string() + ": " + msg);
  }
  const auto original = image.format;
  if (original & (PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    throw IoError(path.string() + ": expected 8-bit gray or RGB PNG without alpha");
  }
  Png8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = (original & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  image.format = out.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  out.pixels.resize(out.width * out.height * out.channels);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), static_cast<png_int_32>(out.width * out.channels),
                             nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path.string() + ": " + msg);
  }
  return out;
}

Png8 image_to_png(const Image& image) {
  Png8 png{image.height, image.width, 3, std::vector<std::uint8_t>(image.height * image.width * 3)};
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        png.pixels[(y * image.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return png;
}

Image png_to_image(const Png8& png) {
  Image image(png.height, png.width);
  for (std::size_t y = 0; y < png.height; ++y) {
    for (std::size_t x = 0; x < png.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const auto src = png.channels == 3 ? (y * png.width + x) * 3 + c : y * png.width + x;
        image.at(c, y, x) = png.pixels[src] / 255.0;
      }
    }
  }
  return image;
}

void write_image_png(const std::filesystem::path& path, const Image& image) { write_png(path, image_to_png(image)); }

Image read_image_png(const std::filesystem::path& path) { return png_to_image(read_png(path)); }

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_png(path, Png8{labels.height, labels.width, 1, labels.data});
}

LabelMap read_label_png(const std::filesystem::path& path) {
  auto png = read_png(path);
  if (png.channels != 1) throw IoError(path.string() + ": label PNG must be single-channel");
  LabelMap lm(png.height, png.width);
  lm.data = std::move(png.pixels);
  return lm;
}

}  // namespace pixmatch
