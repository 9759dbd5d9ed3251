#pragma once

// Procedural source/target segmentation scenes with a controllable domain gap.
//
// A scene is a grid of cells; each cell is empty or holds one shape
// (circle, square, triangle, stripe) of a random size and position. Labels
// are rasterised at pixel centres; images are anti-aliased with 4x4
// supersampling. Target images are rendered from independent scenes with a
// per-class palette shift, then blurred, gamma-adjusted and noised.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pixmatch/image.hpp"
#include "pixmatch/rng.hpp"

namespace pixmatch {

enum class ShapeClass : std::uint8_t { background = 0, circle = 1, square = 2, triangle = 3, stripe = 4 };

inline constexpr std::size_t kMaxSceneClasses = 5;

struct SceneSpec {
  std::size_t image_size = 64;
  std::size_t num_classes = 5;
  std::size_t grid = 3;  // cells per side
  double empty_cell_prob = 0.2;
  double min_size_frac = 0.45;  // shape extent as a fraction of the cell side
  double max_size_frac = 0.9;
  std::uint64_t seed = 0;

  void validate(std::size_t total_stride = 4) const;
  std::string canonical() const;
  std::size_t cell_size() const { return image_size / grid; }
};

using Rgb = std::array<double, 3>;

struct DomainGap {
  std::vector<Rgb> palette_shift;  // one offset per class
  double noise_sigma = 0.0;
  double blur_sigma = 0.0;
  double gamma = 1.0;
  // Each target image renders with the gap scaled by u ~ U(1 - intensity_spread, 1) (see scaled()),
  // so target images range from source-like to the full gap.
  double intensity_spread = 0.0;
  // Each target image has its hue rotated by U(-hue_spread, hue_spread) turns.
  double hue_spread = 0.0;

  static DomainGap identity(std::size_t num_classes);
  /// Calibrated default at strength 1: per-class shifts within +-0.25, noise 0.05, blur 1.0, gamma 1.3.
  /// Other strengths scale shifts, noise, blur and (gamma - 1) linearly.
  static DomainGap default_gap(std::size_t num_classes, double strength = 1.0);
  /// Palette shift, noise and blur times u; gamma 1 + (gamma - 1) * u.
  DomainGap scaled(double u) const;
  void validate(std::size_t num_classes) const;
  std::string canonical() const;
  bool is_identity() const;
};

struct SceneObject {
  ShapeClass cls = ShapeClass::circle;
  double cx = 0.0;
  double cy = 0.0;
  double size = 0.0;
  bool vertical = false;  // stripe orientation
  Rgb tint{};             // per-instance colour jitter
};

struct Scene {
  std::vector<SceneObject> objects;
  Rgb background_tint{};
  double texture_phase = 0.0;
};

/// Canonical (source) class colours.
const std::array<Rgb, kMaxSceneClasses>& canonical_palette();

Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_seed);
bool object_contains(const SceneObject& obj, double px, double py);
LabelMap rasterize_labels(const Scene& scene, const SceneSpec& spec);
/// Anti-aliased render with `palette_shift` added to class colours (empty = none).
Image render_scene(const Scene& scene, const SceneSpec& spec, const std::vector<Rgb>& palette_shift = {});
/// Blur, gamma and additive Gaussian noise of the gap, then clamp to [0,1].
void apply_domain_gap(Image& image, const DomainGap& gap, Rng& noise_rng);

/// Expected fraction of pixels per class under the generator's size and placement laws.
std::vector<double> expected_class_proportions(const SceneSpec& spec);

/// FNV-1a 64-bit digest rendered as 16 hex digits.
std::string digest_hex(const std::string& text);

struct ManifestEntry {
  std::string image;  // relative to the manifest's directory
  std::string label;
};

struct Manifest {
  std::string domain;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;
  std::string scene_digest;
  std::string gap_digest;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::size_t size() const { return entries.size(); }
  void write(const std::filesystem::path& path) const;
  static Manifest read(const std::filesystem::path& path);
};

struct Sample {
  Image image;
  LabelMap label;
};

/// Renders both domains under `out_dir/{source,target}` and writes `source.manifest`, `target.manifest`.
std::pair<Manifest, Manifest> generate_pair_dataset(const SceneSpec& spec, const DomainGap& gap, std::size_t n_source,
                                                    std::size_t n_target, const std::filesystem::path& out_dir);

/// Seed of the i-th scene of a domain (0 = source, 1 = target).
std::uint64_t scene_seed(const SceneSpec& spec, int domain, std::size_t index);

Sample load_sample(const Manifest& manifest, std::size_t index);
std::vector<Sample> load_all(const Manifest& manifest);

}  // namespace pixmatch
