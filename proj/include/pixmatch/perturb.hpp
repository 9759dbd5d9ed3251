#pragma once

// Perturbation functions applied to a (target image, pseudolabel) pair.
//
// Every function maps a PerturbResult (image, label, validity mask and an
// optional soft target) to a new one. Geometric steps move the label, mask
// and soft target together with the image; photometric steps touch the image
// only. Functions that mix in source content read a single source sample.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pixmatch/image.hpp"
#include "pixmatch/rng.hpp"

namespace pixmatch {

struct PerturbResult {
  Image image;
  LabelMap label;
  Mask valid_mask;
  std::optional<SoftLabel> soft;

  /// Wraps a clean pair with an all-true mask.
  static PerturbResult from_pair(Image image, LabelMap label);
  /// Throws ShapeError unless image, label, mask (and soft) share spatial extents.
  void check_consistent() const;
};

/// Axis-aligned pixel rectangle.
struct PixelBox {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool contains(std::size_t y, std::size_t x) const {
    return y >= top && y < top + height && x >= left && x < left + width;
  }
  bool operator==(const PixelBox&) const = default;
};

// --- data augmentation -----------------------------------------------------

struct AugConfig {
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  std::size_t output_size = 64;

  double color_jitter_prob = 0.8;
  double brightness_limit = 0.2;
  double contrast_limit = 0.2;
  double hue_shift = 0.1;  // fraction of the hue circle
  double saturation_shift = 0.3;
  double value_shift = 0.3;

  double gray_prob = 0.2;

  double blur_prob = 0.5;
  std::size_t blur_limit = 5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  void validate() const;
  /// Full-frame crop, all photometric probabilities zero.
  static AugConfig identity(std::size_t output_size);
};

/// What a single augmentation draw did; filled when requested.
struct AugmentTrace {
  PixelBox crop;
  bool color_jitter = false;
  bool grayscale = false;
  bool blur = false;
  double blur_sigma = 0.0;
  std::size_t blur_kernel = 0;
};

/// Random resized crop window (area fraction in the scale range, log-uniform aspect ratio).
/// Degenerate windows are redrawn up to 10 times before failing.
PixelBox sample_resized_crop(std::size_t height, std::size_t width, const AugConfig& cfg, Rng& rng);

/// Row (or column) in the crop window that output index `out_index` copies under nearest-neighbour.
std::size_t nearest_source_index(std::size_t out_index, std::size_t out_extent, std::size_t crop_extent);

Image crop_resize_bilinear(const Image& image, const PixelBox& crop, std::size_t out_h, std::size_t out_w);

template <typename T>
std::vector<T> crop_resize_nearest(std::span<const T> plane, std::size_t width, const PixelBox& crop,
                                   std::size_t out_h, std::size_t out_w) {
  std::vector<T> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = crop.top + nearest_source_index(y, out_h, crop.height);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = crop.left + nearest_source_index(x, out_w, crop.width);
      out[y * out_w + x] = plane[sy * width + sx];
    }
  }
  return out;
}

/// Applies the crop to image (bilinear) and to label, mask and soft target (nearest).
PerturbResult apply_crop(const PerturbResult& in, const PixelBox& crop, std::size_t out_size);

void adjust_brightness_contrast(Image& image, double brightness, double contrast_factor);
void shift_hue_saturation_value(Image& image, double hue_shift, double sat_shift, double val_shift);
void to_grayscale(Image& image);
/// Separable Gaussian blur with reflect-101 borders; `kernel` must be odd.
void gaussian_blur(Image& image, double sigma, std::size_t kernel);
/// Smallest odd integer >= 4*sigma + 1, capped at `limit`.
std::size_t blur_kernel_size(double sigma, std::size_t limit);

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

PerturbResult perturb_augment(const Image& x, const LabelMap& y, const AugConfig& cfg, Rng& rng,
                              AugmentTrace* trace = nullptr);
PerturbResult augment_sample(const PerturbResult& in, const AugConfig& cfg, Rng& rng, AugmentTrace* trace = nullptr);

// --- CutMix ----------------------------------------------------------------

struct CutMixConfig {
  double ratio_min = 0.1;  // box side as a fraction of the image side
  double ratio_max = 0.5;
  void validate() const;
};

/// Box of side fraction r ~ U[ratio_min, ratio_max], placed uniformly so it lies inside the image.
PixelBox sample_cutmix_box(std::size_t height, std::size_t width, const CutMixConfig& cfg, Rng& rng);

/// Pastes source content inside `box`; outside the box the target sample is kept.
PerturbResult cutmix_with_box(const PerturbResult& target, const Image& source_image, const LabelMap& source_label,
                              const PixelBox& box);

PerturbResult perturb_cutmix(const Image& x_t, const LabelMap& y_t, const Image& x_s, const LabelMap& y_s,
                             const CutMixConfig& cfg, Rng& rng);

// --- Fourier amplitude swap ------------------------------------------------

struct FourierConfig {
  double beta = 0.01;
  void validate() const;
};

/// Half-extents (floor(beta*H), floor(beta*W)) of the centred low-frequency window.
std::pair<std::size_t, std::size_t> fourier_half_extents(std::size_t height, std::size_t width, double beta);

/// Whether DFT bin (ky, kx) lies in the centred window with the given half-extents.
bool in_low_frequency_window(std::size_t ky, std::size_t kx, std::size_t height, std::size_t width,
                             std::size_t half_h, std::size_t half_w);

/// Replaces the target amplitude with the source amplitude inside the window, keeping target
/// phase, and returns the real part of the inverse transform (unclamped).
std::vector<double> swap_low_frequency_amplitude(std::span<const double> target, std::span<const double> source,
                                                 std::size_t height, std::size_t width, std::size_t half_h,
                                                 std::size_t half_w);

PerturbResult perturb_fourier(const Image& x_t, const LabelMap& y_t, const Image& x_s, const FourierConfig& cfg);
PerturbResult fourier_sample(const PerturbResult& in, const Image& x_s, const FourierConfig& cfg);

// --- composition -----------------------------------------------------------

enum class PerturbKind { identity, augment, cutmix, fourier, style };

std::string_view perturb_kind_name(PerturbKind kind);
/// Parses "identity", "augment", "cutmix", "fourier" or "style".
PerturbKind parse_perturb_kind(std::string_view name);

/// One configured step of a perturbation chain.
struct PerturbationFn {
  PerturbKind kind = PerturbKind::identity;
  AugConfig augment;
  CutMixConfig cutmix;
  FourierConfig fourier;
  bool enabled = true;

  PerturbResult apply(const PerturbResult& in, const Image& x_s, const LabelMap& y_s, Rng& rng) const;
};

/// Builds a chain step. Selecting the style slot fails: it needs an external style-transfer model.
PerturbationFn make_perturbation(PerturbKind kind, const AugConfig& aug = {}, const CutMixConfig& cutmix = {},
                                 const FourierConfig& fourier = {});

/// Applies enabled steps left to right; every step sees the same source sample and shares `rng`.
PerturbResult compose_perturbations(std::span<const PerturbationFn> fns, const PerturbResult& input, const Image& x_s,
                                    const LabelMap& y_s, Rng& rng);

}  // namespace pixmatch
