#include "pixmatch/image.hpp"

#include <algorithm>

#include "pixmatch/errors.hpp"

namespace pixmatch {

void Image::clamp01() {
  for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const auto h = images[0].height;
  const auto w = images[0].width;
  std::vector<double> data;
  data.reserve(images.size() * Image::kChannels * h * w);
  for (const auto& im : images) {
    if (im.height != h || im.width != w) throw ShapeError("images_to_tensor: mixed spatial shapes in batch");
    data.insert(data.end(), im.data.begin(), im.data.end());
  }
  return Tensor::from_data({images.size(), Image::kChannels, h, w}, std::move(data));
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

std::vector<LabelMap> argmax_labels(const Tensor& scores) {
  if (scores.dim() != 4) throw ShapeError("argmax_labels expects [N,C,H,W]");
  const auto& s = scores.shape();
  const std::size_t c = s[1], hw = s[2] * s[3];
  if (c > kIgnoreLabel) throw ShapeError("argmax_labels: too many classes for 8-bit labels");
  const auto x = scores.data();
  std::vector<LabelMap> out;
  for (std::size_t n = 0; n < s[0]; ++n) {
    LabelMap lm(s[2], s[3]);
    const double* base = x.data() + n * c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (base[k * hw + p] > base[best * hw + p]) best = k;
      }
      lm.data[p] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(lm));
  }
  return out;
}

SoftLabel soft_label_from(const Tensor& probs, std::size_t n) {
  if (probs.dim() != 4 || n >= probs.shape()[0]) throw ShapeError("soft_label_from: bad shape or index");
  const auto& s = probs.shape();
  SoftLabel out(s[1], s[2], s[3]);
  const auto x = probs.data();
  const auto stride = s[1] * s[2] * s[3];
  std::copy(x.begin() + static_cast<std::ptrdiff_t>(n * stride), x.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride),
            out.data.begin());
  return out;
}

}  // namespace pixmatch
