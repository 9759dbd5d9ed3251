#include "pixmatch/perturb.hpp"

#include <algorithm>
#include <cmath>

#include "pixmatch/errors.hpp"
#include "pixmatch/fft.hpp"

namespace pixmatch {

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
}

void check_same_extent(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": spatial shape mismatch (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

std::size_t reflect101(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  while (i < 0 || i > last) {
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
  }
  return static_cast<std::size_t>(i);
}

}  // namespace

PerturbResult PerturbResult::from_pair(Image image, LabelMap label) {
  PerturbResult r;
  r.valid_mask = Mask(label.height, label.width, true);
  for (std::size_t i = 0; i < label.data.size(); ++i) {
    if (label.data[i] == kIgnoreLabel) r.valid_mask.data[i] = 0;
  }
  r.image = std::move(image);
  r.label = std::move(label);
  r.check_consistent();
  return r;
}

void PerturbResult::check_consistent() const {
  const auto h = image.height, w = image.width;
  if (label.height != h || label.width != w || valid_mask.height != h || valid_mask.width != w) {
    throw ShapeError("perturbation sample: image, label and mask extents differ");
  }
  if (soft && (soft->height != h || soft->width != w)) throw ShapeError("perturbation sample: soft target extent differs");
}

// ---------------------------------------------------------------------------
// Augmentation

void AugConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("crop_scale must satisfy 0 < min <= max <= 1");
  }
  if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max)) throw ConfigError("crop_ratio must satisfy 0 < min <= max");
  if (output_size == 0) throw ConfigError("augmentation output_size must be positive");
  check_probability(color_jitter_prob, "color_jitter_prob");
  check_probability(gray_prob, "gray_prob");
  check_probability(blur_prob, "blur_prob");
  if (blur_limit < 3 || blur_limit % 2 == 0) throw ConfigError("blur_limit must be an odd integer >= 3");
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("blur sigma range invalid");
  if (brightness_limit < 0.0 || contrast_limit < 0.0 || hue_shift < 0.0 || saturation_shift < 0.0 || value_shift < 0.0) {
    throw ConfigError("jitter limits must be non-negative");
  }
}

AugConfig AugConfig::identity(std::size_t output_size) {
  AugConfig cfg;
  cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
  cfg.crop_ratio_min = cfg.crop_ratio_max = 1.0;
  cfg.output_size = output_size;
  cfg.color_jitter_prob = 0.0;
  cfg.gray_prob = 0.0;
  cfg.blur_prob = 0.0;
  return cfg;
}

PixelBox sample_resized_crop(std::size_t height, std::size_t width, const AugConfig& cfg, Rng& rng) {
  const double area = static_cast<double>(height * width);
  const double log_lo = std::log(cfg.crop_ratio_min);
  const double log_hi = std::log(cfg.crop_ratio_max);
  constexpr int kMaxRetries = 10;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    const double target_area = area * rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    auto w = static_cast<std::size_t>(std::lround(std::sqrt(target_area * aspect)));
    auto h = static_cast<std::size_t>(std::lround(std::sqrt(target_area / aspect)));
    w = std::min(w, width);
    h = std::min(h, height);
    if (w < 1 || h < 1) continue;
    PixelBox box;
    box.height = h;
    box.width = w;
    box.top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(height - h)));
    box.left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(width - w)));
    return box;
  }
  throw ValidationError("random resized crop: degenerate window after 10 retries");
}

std::size_t nearest_source_index(std::size_t out_index, std::size_t out_extent, std::size_t crop_extent) {
  const double src = (static_cast<double>(out_index) + 0.5) * static_cast<double>(crop_extent) /
                     static_cast<double>(out_extent);
  return std::min(static_cast<std::size_t>(src), crop_extent - 1);
}

Image crop_resize_bilinear(const Image& image, const PixelBox& crop, std::size_t out_h, std::size_t out_w) {
  if (crop.top + crop.height > image.height || crop.left + crop.width > image.width || crop.height == 0 ||
      crop.width == 0) {
    throw ShapeError("crop window outside image");
  }
  Image out(out_h, out_w);
  if (crop.height == out_h && crop.width == out_w) {
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
      for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) out.at(c, y, x) = image.at(c, crop.top + y, crop.left + x);
      }
    }
    return out;
  }
  auto tap = [](std::size_t o, std::size_t out_extent, std::size_t in_extent) {
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_extent) / static_cast<double>(out_extent) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
    const auto i0 = static_cast<std::size_t>(src);
    const auto i1 = std::min(i0 + 1, in_extent - 1);
    return std::tuple{i0, i1, src - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = tap(y, out_h, crop.height);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = tap(x, out_w, crop.width);
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double a = image.at(c, crop.top + y0, crop.left + x0);
        const double b = image.at(c, crop.top + y0, crop.left + x1);
        const double d = image.at(c, crop.top + y1, crop.left + x0);
        const double e = image.at(c, crop.top + y1, crop.left + x1);
        const double top = a + fx * (b - a);
        const double bot = d + fx * (e - d);
        out.at(c, y, x) = top + fy * (bot - top);
      }
    }
  }
  return out;
}

PerturbResult apply_crop(const PerturbResult& in, const PixelBox& crop, std::size_t out_size) {
  in.check_consistent();
  const std::size_t w = in.image.width;
  PerturbResult out;
  out.image = crop_resize_bilinear(in.image, crop, out_size, out_size);
  out.label = LabelMap(out_size, out_size);
  out.label.data = crop_resize_nearest<std::uint8_t>(in.label.data, w, crop, out_size, out_size);
  out.valid_mask = Mask(out_size, out_size, true);
  out.valid_mask.data = crop_resize_nearest<std::uint8_t>(in.valid_mask.data, w, crop, out_size, out_size);
  if (in.soft) {
    const auto& s = *in.soft;
    SoftLabel soft(s.classes, out_size, out_size);
    const auto plane = s.height * s.width;
    for (std::size_t c = 0; c < s.classes; ++c) {
      auto resized = crop_resize_nearest<double>(std::span<const double>(s.data.data() + c * plane, plane), w, crop,
                                                 out_size, out_size);
      std::copy(resized.begin(), resized.end(), soft.data.begin() + static_cast<std::ptrdiff_t>(c * out_size * out_size));
    }
    out.soft = std::move(soft);
  }
  return out;
}

void adjust_brightness_contrast(Image& image, double brightness, double contrast_factor) {
  for (auto& v : image.data) v = v * contrast_factor + brightness;
  image.clamp01();
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
    if (h < 0.0) h += 6.0;
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  h /= 6.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const auto sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

void shift_hue_saturation_value(Image& image, double hue_shift, double sat_shift, double val_shift) {
  const auto n = image.plane_size();
  double* r = image.data.data();
  double* g = r + n;
  double* b = g + n;
  for (std::size_t i = 0; i < n; ++i) {
    double h, s, v;
    rgb_to_hsv(r[i], g[i], b[i], h, s, v);
    h += hue_shift;
    s = std::clamp(s + sat_shift, 0.0, 1.0);
    v = std::clamp(v + val_shift, 0.0, 1.0);
    hsv_to_rgb(h, s, v, r[i], g[i], b[i]);
  }
  image.clamp01();
}

void to_grayscale(Image& image) {
  const auto n = image.plane_size();
  double* r = image.data.data();
  double* g = r + n;
  double* b = g + n;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    r[i] = g[i] = b[i] = y;
  }
}

std::size_t blur_kernel_size(double sigma, std::size_t limit) {
  auto k = static_cast<std::size_t>(std::ceil(4.0 * sigma + 1.0));
  if (k % 2 == 0) ++k;
  return std::min(k, limit);
}

void gaussian_blur(Image& image, double sigma, std::size_t kernel) {
  if (kernel % 2 == 0 || sigma <= 0.0) throw ValidationError("gaussian_blur: kernel must be odd and sigma positive");
  const auto radius = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> weights(kernel);
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    weights[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : weights) w /= total;

  const auto h = image.height, w = image.width;
  std::vector<double> tmp(h * w);
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    auto plane = image.plane(c);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += weights[static_cast<std::size_t>(k + radius)] *
                 plane[y * w + reflect101(static_cast<std::ptrdiff_t>(x) + k, w)];
        }
        tmp[y * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += weights[static_cast<std::size_t>(k + radius)] *
                 tmp[reflect101(static_cast<std::ptrdiff_t>(y) + k, h) * w + x];
        }
        plane[y * w + x] = acc;
      }
    }
  }
  image.clamp01();
}

PerturbResult augment_sample(const PerturbResult& in, const AugConfig& cfg, Rng& rng, AugmentTrace* trace) {
  cfg.validate();
  in.check_consistent();
  const auto crop = sample_resized_crop(in.image.height, in.image.width, cfg, rng);
  PerturbResult out = apply_crop(in, crop, cfg.output_size);

  AugmentTrace t;
  t.crop = crop;
  if (rng.bernoulli(cfg.color_jitter_prob)) {
    t.color_jitter = true;
    const double brightness = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit);
    const double contrast = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit);
    const double dh = rng.uniform(-cfg.hue_shift, cfg.hue_shift);
    const double ds = rng.uniform(-cfg.saturation_shift, cfg.saturation_shift);
    const double dv = rng.uniform(-cfg.value_shift, cfg.value_shift);
    adjust_brightness_contrast(out.image, brightness, contrast);
    shift_hue_saturation_value(out.image, dh, ds, dv);
  }
  if (rng.bernoulli(cfg.gray_prob)) {
    t.grayscale = true;
    to_grayscale(out.image);
  }
  if (rng.bernoulli(cfg.blur_prob)) {
    t.blur = true;
    t.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    t.blur_kernel = blur_kernel_size(t.blur_sigma, cfg.blur_limit);
    gaussian_blur(out.image, t.blur_sigma, t.blur_kernel);
  }
  out.image.clamp01();
  if (trace) *trace = t;
  return out;
}

PerturbResult perturb_augment(const Image& x, const LabelMap& y, const AugConfig& cfg, Rng& rng, AugmentTrace* trace) {
  return augment_sample(PerturbResult::from_pair(x, y), cfg, rng, trace);
}

// ---------------------------------------------------------------------------
// CutMix

void CutMixConfig::validate() const {
  if (!(ratio_min >= 0.0 && ratio_min <= ratio_max && ratio_max <= 1.0)) {
    throw ConfigError("cutmix ratio must satisfy 0 <= min <= max <= 1");
  }
}

PixelBox sample_cutmix_box(std::size_t height, std::size_t width, const CutMixConfig& cfg, Rng& rng) {
  cfg.validate();
  const double r = rng.uniform(cfg.ratio_min, cfg.ratio_max);
  PixelBox box;
  box.height = std::min(height, static_cast<std::size_t>(std::lround(r * static_cast<double>(height))));
  box.width = std::min(width, static_cast<std::size_t>(std::lround(r * static_cast<double>(width))));
  box.top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(height - box.height)));
  box.left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(width - box.width)));
  return box;
}

PerturbResult cutmix_with_box(const PerturbResult& target, const Image& source_image, const LabelMap& source_label,
                              const PixelBox& box) {
  target.check_consistent();
  check_same_extent(target.image, source_image, "cutmix");
  if (source_label.height != source_image.height || source_label.width != source_image.width) {
    throw ShapeError("cutmix: source label extent differs from source image");
  }
  if (box.top + box.height > target.image.height || box.left + box.width > target.image.width) {
    throw ShapeError("cutmix: box outside image");
  }
  PerturbResult out = target;
  const auto w = target.image.width;
  for (std::size_t y = box.top; y < box.top + box.height; ++y) {
    for (std::size_t x = box.left; x < box.left + box.width; ++x) {
      for (std::size_t c = 0; c < Image::kChannels; ++c) out.image.at(c, y, x) = source_image.at(c, y, x);
      const auto label = source_label.at(y, x);
      out.label.at(y, x) = label;
      out.valid_mask.data[y * w + x] = label == kIgnoreLabel ? 0 : 1;
      if (out.soft) {
        auto& s = *out.soft;
        const auto plane = s.height * s.width;
        for (std::size_t c = 0; c < s.classes; ++c) s.data[c * plane + y * w + x] = (c == label) ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

PerturbResult perturb_cutmix(const Image& x_t, const LabelMap& y_t, const Image& x_s, const LabelMap& y_s,
                             const CutMixConfig& cfg, Rng& rng) {
  check_same_extent(x_t, x_s, "cutmix");
  auto target = PerturbResult::from_pair(x_t, y_t);
  const auto box = sample_cutmix_box(x_t.height, x_t.width, cfg, rng);
  return cutmix_with_box(target, x_s, y_s, box);
}

// ---------------------------------------------------------------------------
// Fourier

void FourierConfig::validate() const {
  if (!(beta >= 0.0 && beta < 0.5)) throw ConfigError("fourier beta must satisfy 0 <= beta < 0.5");
}

std::pair<std::size_t, std::size_t> fourier_half_extents(std::size_t height, std::size_t width, double beta) {
  return {static_cast<std::size_t>(std::floor(beta * static_cast<double>(height))),
          static_cast<std::size_t>(std::floor(beta * static_cast<double>(width)))};
}

bool in_low_frequency_window(std::size_t ky, std::size_t kx, std::size_t height, std::size_t width, std::size_t half_h,
                             std::size_t half_w) {
  // Signed frequency |f| <= half  <=>  k <= half or k >= n - half.
  const bool row = ky <= half_h || ky + half_h >= height;
  const bool col = kx <= half_w || kx + half_w >= width;
  return row && col;
}

std::vector<double> swap_low_frequency_amplitude(std::span<const double> target, std::span<const double> source,
                                                 std::size_t height, std::size_t width, std::size_t half_h,
                                                 std::size_t half_w) {
  if (target.size() != height * width || source.size() != height * width) {
    throw ShapeError("fourier swap: plane size mismatch");
  }
  auto ft = fft2(target, height, width);
  const auto fs = fft2(source, height, width);
  for (std::size_t ky = 0; ky < height; ++ky) {
    for (std::size_t kx = 0; kx < width; ++kx) {
      if (!in_low_frequency_window(ky, kx, height, width, half_h, half_w)) continue;
      auto& t = ft.at(ky, kx);
      t = std::polar(std::abs(fs.at(ky, kx)), std::arg(t));
    }
  }
  const auto back = ifft2(std::move(ft));
  std::vector<double> out(height * width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = back.data[i].real();
  return out;
}

PerturbResult fourier_sample(const PerturbResult& in, const Image& x_s, const FourierConfig& cfg) {
  cfg.validate();
  in.check_consistent();
  check_same_extent(in.image, x_s, "fourier");
  const auto h = in.image.height, w = in.image.width;
  const auto [half_h, half_w] = fourier_half_extents(h, w, cfg.beta);
  PerturbResult out = in;
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    const auto swapped = swap_low_frequency_amplitude(in.image.plane(c), x_s.plane(c), h, w, half_h, half_w);
    std::copy(swapped.begin(), swapped.end(), out.image.plane(c).begin());
  }
  out.image.clamp01();
  return out;
}

PerturbResult perturb_fourier(const Image& x_t, const LabelMap& y_t, const Image& x_s, const FourierConfig& cfg) {
  return fourier_sample(PerturbResult::from_pair(x_t, y_t), x_s, cfg);
}

// ---------------------------------------------------------------------------
// Composition

std::string_view perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::identity: return "identity";
    case PerturbKind::augment: return "augment";
    case PerturbKind::cutmix: return "cutmix";
    case PerturbKind::fourier: return "fourier";
    case PerturbKind::style: return "style";
  }
  return "unknown";
}

PerturbKind parse_perturb_kind(std::string_view name) {
  for (auto k : {PerturbKind::identity, PerturbKind::augment, PerturbKind::cutmix, PerturbKind::fourier,
                 PerturbKind::style}) {
    if (perturb_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown perturbation '" + std::string(name) + "' (expected identity, augment, cutmix, fourier)");
}

PerturbationFn make_perturbation(PerturbKind kind, const AugConfig& aug, const CutMixConfig& cutmix,
                                 const FourierConfig& fourier) {
  if (kind == PerturbKind::style) {
    throw ConfigError("style perturbation is not available: it requires an external pretrained style-transfer model");
  }
  aug.validate();
  cutmix.validate();
  fourier.validate();
  PerturbationFn fn;
  fn.kind = kind;
  fn.augment = aug;
  fn.cutmix = cutmix;
  fn.fourier = fourier;
  return fn;
}

PerturbResult PerturbationFn::apply(const PerturbResult& in, const Image& x_s, const LabelMap& y_s, Rng& rng) const {
  switch (kind) {
    case PerturbKind::identity: return in;
    case PerturbKind::augment: return augment_sample(in, augment, rng);
    case PerturbKind::cutmix: {
      check_same_extent(in.image, x_s, "cutmix");
      const auto box = sample_cutmix_box(in.image.height, in.image.width, cutmix, rng);
      return cutmix_with_box(in, x_s, y_s, box);
    }
    case PerturbKind::fourier: return fourier_sample(in, x_s, fourier);
    case PerturbKind::style:
      throw ConfigError("style perturbation is not available: it requires an external pretrained style-transfer model");
  }
  throw ConfigError("unknown perturbation kind");
}

PerturbResult compose_perturbations(std::span<const PerturbationFn> fns, const PerturbResult& input, const Image& x_s,
                                    const LabelMap& y_s, Rng& rng) {
  if (fns.empty()) throw ConfigError("compose_perturbations: empty perturbation list");
  PerturbResult current = input;
  for (const auto& fn : fns) {
    if (!fn.enabled) continue;
    current = fn.apply(current, x_s, y_s, rng);
  }
  return current;
}

}  // namespace pixmatch
