#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pixmatch/tensor.hpp"

namespace pixmatch {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// RGB image stored planar (channel-major), values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // 3 * height * width

  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(kChannels * h * w, fill) {}

  std::size_t plane_size() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::span<double> plane(std::size_t c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(std::size_t c) const { return {data.data() + c * plane_size(), plane_size()}; }

  void clamp01();
  bool operator==(const Image&) const = default;
};

/// Per-pixel class indices; kIgnoreLabel marks pixels excluded from losses and metrics.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

/// H x W booleans stored as bytes (0/1).
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool fill) : height(h), width(w), data(h * w, fill ? 1 : 0) {}

  bool at(std::size_t y, std::size_t x) const { return data[y * width + x] != 0; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Detached per-pixel class distribution, planar [C,H,W].
struct SoftLabel {
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  SoftLabel() = default;
  SoftLabel(std::size_t c, std::size_t h, std::size_t w) : classes(c), height(h), width(w), data(c * h * w, 0.0) {}
};

/// Stacks images into a [N,3,H,W] tensor (no gradient).
Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& image);

/// Per-pixel argmax over channels of [N,C,H,W]; ties resolve to the lowest index.
std::vector<LabelMap> argmax_labels(const Tensor& scores);

/// Extracts sample `n` of a [N,C,H,W] probability tensor.
SoftLabel soft_label_from(const Tensor& probs, std::size_t n);

}  // namespace pixmatch
