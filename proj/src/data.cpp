#include "pixmatch/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pixmatch/errors.hpp"
#include "pixmatch/perturb.hpp"
#include "pixmatch/png_io.hpp"

namespace pixmatch {

namespace {

constexpr std::size_t kSupersample = 4;
constexpr double kTintRange = 0.06;
constexpr double kStripeThickness = 1.0 / 3.0;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Multiplicative brightness texture of each class at (x, y).
double class_texture(ShapeClass cls, double x, double y, double phase) {
  switch (cls) {
    case ShapeClass::background:
      return 1.0 + 0.08 * std::sin(0.35 * x + phase) * std::cos(0.27 * y - phase);
    case ShapeClass::square: {
      const bool odd = (static_cast<long>(std::floor(x / 4.0)) + static_cast<long>(std::floor(y / 4.0))) % 2 != 0;
      return odd ? 0.85 : 1.1;
    }
    case ShapeClass::stripe:
      return 1.0 + 0.12 * std::sin(1.2 * (x + y));
    default:
      return 1.0;
  }
}

}  // namespace

void SceneSpec::validate(std::size_t total_stride) const {
  if (image_size == 0 || image_size % total_stride != 0) {
    throw ConfigError("image_size must be a positive multiple of " + std::to_string(total_stride));
  }
  if (num_classes < 2 || num_classes > kMaxSceneClasses) throw ConfigError("scene num_classes must be in [2, 5]");
  if (grid == 0 || cell_size() < 4) throw ConfigError("scene grid too fine for image_size");
  if (!(empty_cell_prob >= 0.0 && empty_cell_prob <= 1.0)) throw ConfigError("empty_cell_prob must lie in [0,1]");
  if (!(min_size_frac > 0.0 && min_size_frac <= max_size_frac && max_size_frac <= 1.0)) {
    throw ConfigError("shape size fractions must satisfy 0 < min <= max <= 1");
  }
}

std::string SceneSpec::canonical() const {
  std::ostringstream os;
  os << "image_size=" << image_size << ";num_classes=" << num_classes << ";grid=" << grid
     << ";empty_cell_prob=" << format_double(empty_cell_prob) << ";min_size_frac=" << format_double(min_size_frac)
     << ";max_size_frac=" << format_double(max_size_frac) << ";seed=" << seed;
  return os.str();
}

DomainGap DomainGap::identity(std::size_t num_classes) {
  DomainGap g;
  g.palette_shift.assign(num_classes, Rgb{0.0, 0.0, 0.0});
  return g;
}

DomainGap DomainGap::default_gap(std::size_t num_classes, double strength) {
  if (!(strength >= 0.0 && strength <= 4.0)) throw ConfigError("gap strength must lie in [0,4]");
  static const std::array<Rgb, kMaxSceneClasses> shifts = {{
      {0.10, -0.05, 0.15},    // background
      {-0.20, 0.20, 0.10},    // circle
      {0.20, -0.15, 0.20},    // square
      {0.15, 0.20, -0.25},    // triangle
      {-0.25, -0.10, 0.20},   // stripe
  }};
  DomainGap g;
  g.palette_shift.assign(shifts.begin(), shifts.begin() + static_cast<std::ptrdiff_t>(num_classes));
  for (auto& s : g.palette_shift) {
    for (auto& v : s) v *= strength;
  }
  g.noise_sigma = 0.05 * strength;
  g.blur_sigma = 1.0 * strength;
  g.gamma = 1.0 + 0.3 * strength;
  return g;
}

DomainGap DomainGap::scaled(double u) const {
  DomainGap g = *this;
  for (auto& s : g.palette_shift) {
    for (auto& v : s) v *= u;
  }
  g.noise_sigma *= u;
  g.blur_sigma *= u;
  g.gamma = 1.0 + (gamma - 1.0) * u;
  return g;
}

void DomainGap::validate(std::size_t num_classes) const {
  if (palette_shift.size() != num_classes) throw ConfigError("palette_shift must have one entry per class");
  for (const auto& s : palette_shift) {
    for (double v : s) {
      if (!(std::abs(v) <= 1.0)) throw ConfigError("palette_shift entries must lie in [-1,1]");
    }
  }
  if (!(intensity_spread >= 0.0 && intensity_spread <= 1.0)) throw ConfigError("intensity_spread must lie in [0,1]");
  if (!(hue_spread >= 0.0 && hue_spread <= 0.5)) throw ConfigError("hue_spread must lie in [0,0.5]");
  if (!(noise_sigma >= 0.0) || !(blur_sigma >= 0.0) || !(gamma > 0.0)) {
    throw ConfigError("domain gap requires noise_sigma >= 0, blur_sigma >= 0, gamma > 0");
  }
}

std::string DomainGap::canonical() const {
  std::ostringstream os;
  os << "palette_shift=";
  for (const auto& s : palette_shift) os << format_double(s[0]) << ',' << format_double(s[1]) << ',' << format_double(s[2]) << '|';
  os << ";noise_sigma=" << format_double(noise_sigma) << ";blur_sigma=" << format_double(blur_sigma)
     << ";gamma=" << format_double(gamma) << ";intensity_spread=" << format_double(intensity_spread)
     << ";hue_spread=" << format_double(hue_spread);
  return os.str();
}

bool DomainGap::is_identity() const {
  for (const auto& s : palette_shift) {
    if (s[0] != 0.0 || s[1] != 0.0 || s[2] != 0.0) return false;
  }
  return noise_sigma == 0.0 && blur_sigma == 0.0 && gamma == 1.0 && hue_spread == 0.0;
}

const std::array<Rgb, kMaxSceneClasses>& canonical_palette() {
  static const std::array<Rgb, kMaxSceneClasses> palette = {{
      {0.45, 0.45, 0.45},  // background
      {0.80, 0.30, 0.25},  // circle
      {0.30, 0.70, 0.35},  // square
      {0.30, 0.40, 0.80},  // triangle
      {0.80, 0.75, 0.30},  // stripe
  }};
  return palette;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate(1);
  Rng rng(seed);
  Scene scene;
  for (auto& t : scene.background_tint) t = rng.uniform(-kTintRange, kTintRange);
  scene.texture_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cell = static_cast<double>(spec.cell_size());
  const auto shape_classes = static_cast<std::int64_t>(spec.num_classes - 1);
  for (std::size_t gy = 0; gy < spec.grid; ++gy) {
    for (std::size_t gx = 0; gx < spec.grid; ++gx) {
      if (rng.bernoulli(spec.empty_cell_prob)) continue;
      SceneObject obj;
      obj.cls = static_cast<ShapeClass>(rng.uniform_int(1, shape_classes));
      obj.size = cell * rng.uniform(spec.min_size_frac, spec.max_size_frac);
      const double half = obj.size / 2.0;
      obj.cx = static_cast<double>(gx) * cell + rng.uniform(half, cell - half);
      obj.cy = static_cast<double>(gy) * cell + rng.uniform(half, cell - half);
      obj.vertical = rng.bernoulli(0.5);
      for (auto& t : obj.tint) t = rng.uniform(-kTintRange, kTintRange);
      scene.objects.push_back(obj);
    }
  }
  return scene;
}

bool object_contains(const SceneObject& obj, double px, double py) {
  const double half = obj.size / 2.0;
  const double dx = px - obj.cx;
  const double dy = py - obj.cy;
  switch (obj.cls) {
    case ShapeClass::circle: return dx * dx + dy * dy < half * half;
    case ShapeClass::square: return std::abs(dx) < half && std::abs(dy) < half;
    case ShapeClass::triangle: {
      // Apex at the top; half-width grows linearly to `half` at the base.
      const double depth = dy + half;
      return depth > 0.0 && depth < obj.size && std::abs(dx) < depth / 2.0;
    }
    case ShapeClass::stripe: {
      const double thin = obj.size * kStripeThickness / 2.0;
      return obj.vertical ? (std::abs(dx) < thin && std::abs(dy) < half) : (std::abs(dx) < half && std::abs(dy) < thin);
    }
    case ShapeClass::background: return false;
  }
  return false;
}

LabelMap rasterize_labels(const Scene& scene, const SceneSpec& spec) {
  LabelMap lm(spec.image_size, spec.image_size, 0);
  for (const auto& obj : scene.objects) {
    for (std::size_t y = 0; y < spec.image_size; ++y) {
      for (std::size_t x = 0; x < spec.image_size; ++x) {
        if (object_contains(obj, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          lm.at(y, x) = static_cast<std::uint8_t>(obj.cls);
        }
      }
    }
  }
  return lm;
}

Image render_scene(const Scene& scene, const SceneSpec& spec, const std::vector<Rgb>& palette_shift) {
  const auto& palette = canonical_palette();
  auto class_colour = [&](std::size_t cls, const Rgb& tint) {
    Rgb c{};
    for (std::size_t k = 0; k < 3; ++k) {
      c[k] = palette[cls][k] + tint[k] + (palette_shift.empty() ? 0.0 : palette_shift[cls][k]);
    }
    return c;
  };
  const Rgb background = class_colour(0, scene.background_tint);
  std::vector<Rgb> colours;
  for (const auto& obj : scene.objects) colours.push_back(class_colour(static_cast<std::size_t>(obj.cls), obj.tint));

  Image image(spec.image_size, spec.image_size);
  const double step = 1.0 / kSupersample;
  for (std::size_t y = 0; y < spec.image_size; ++y) {
    for (std::size_t x = 0; x < spec.image_size; ++x) {
      Rgb acc{};
      for (std::size_t sy = 0; sy < kSupersample; ++sy) {
        for (std::size_t sx = 0; sx < kSupersample; ++sx) {
          const double px = static_cast<double>(x) + (static_cast<double>(sx) + 0.5) * step;
          const double py = static_cast<double>(y) + (static_cast<double>(sy) + 0.5) * step;
          const Rgb* colour = &background;
          ShapeClass cls = ShapeClass::background;
          for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            if (object_contains(scene.objects[i], px, py)) {
              colour = &colours[i];
              cls = scene.objects[i].cls;
            }
          }
          const double tex = class_texture(cls, px, py, scene.texture_phase);
          for (std::size_t k = 0; k < 3; ++k) acc[k] += (*colour)[k] * tex;
        }
      }
      for (std::size_t k = 0; k < 3; ++k) image.at(k, y, x) = acc[k] / (kSupersample * kSupersample);
    }
  }
  image.clamp01();
  return image;
}

void apply_domain_gap(Image& image, const DomainGap& gap, Rng& noise_rng) {
  if (gap.blur_sigma > 0.0) {
    auto kernel = static_cast<std::size_t>(2 * std::ceil(3.0 * gap.blur_sigma) + 1);
    gaussian_blur(image, gap.blur_sigma, kernel);
  }
  if (gap.gamma != 1.0) {
    for (auto& v : image.data) v = std::pow(std::clamp(v, 0.0, 1.0), gap.gamma);
  }
  if (gap.noise_sigma > 0.0) {
    for (auto& v : image.data) v += noise_rng.normal(0.0, gap.noise_sigma);
  }
  image.clamp01();
}

std::vector<double> expected_class_proportions(const SceneSpec& spec) {
  spec.validate(1);
  const double cell = static_cast<double>(spec.cell_size());
  const double lo = spec.min_size_frac * cell;
  const double hi = spec.max_size_frac * cell;
  const double mean_sq = hi > lo ? (hi * hi * hi - lo * lo * lo) / (3.0 * (hi - lo)) : lo * lo;
  const double area_factor[kMaxSceneClasses] = {0.0, std::numbers::pi / 4.0, 1.0, 0.5, kStripeThickness};
  const double cells = static_cast<double>(spec.grid * spec.grid);
  const double total = static_cast<double>(spec.image_size * spec.image_size);
  const double per_class = (1.0 - spec.empty_cell_prob) / static_cast<double>(spec.num_classes - 1);
  std::vector<double> out(spec.num_classes, 0.0);
  double fg = 0.0;
  for (std::size_t c = 1; c < spec.num_classes; ++c) {
    out[c] = cells * per_class * area_factor[c] * mean_sq / total;
    fg += out[c];
  }
  out[0] = 1.0 - fg;
  return out;
}

std::string digest_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Manifests

void Manifest::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << "pixmatch-manifest 1\n";
  os << "domain = " << domain << "\n";
  os << "seed = " << seed << "\n";
  os << "num_classes = " << num_classes << "\n";
  os << "scene_digest = " << scene_digest << "\n";
  os << "gap_digest = " << gap_digest << "\n";
  os << "count = " << entries.size() << "\n";
  os << "---\n";
  for (const auto& e : entries) os << e.image << ' ' << e.label << '\n';
  if (!os) throw IoError("failed writing manifest: " + path.string());
}

Manifest Manifest::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  if (!std::getline(is, line) || line != "pixmatch-manifest 1") {
    throw ValidationError(path.string() + ": missing manifest header");
  }
  std::size_t count = 0;
  bool body = false;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!body) {
      if (line == "---") {
        body = true;
        continue;
      }
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad header line");
      const auto key = line.substr(0, eq);
      const auto value = line.substr(eq + 3);
      try {
        if (key == "domain") m.domain = value;
        else if (key == "seed") m.seed = std::stoull(value);
        else if (key == "num_classes") m.num_classes = std::stoull(value);
        else if (key == "scene_digest") m.scene_digest = value;
        else if (key == "gap_digest") m.gap_digest = value;
        else if (key == "count") count = std::stoull(value);
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad value for " + key);
      }
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.image >> e.label)) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad record");
    m.entries.push_back(std::move(e));
  }
  if (!body) throw ValidationError(path.string() + ": missing '---' separator");
  if (count != m.entries.size()) throw ValidationError(path.string() + ": record count does not match header");
  if (m.num_classes < 2) throw ValidationError(path.string() + ": num_classes missing or < 2");
  return m;
}

std::uint64_t scene_seed(const SceneSpec& spec, int domain, std::size_t index) {
  return derive_seed(derive_seed(spec.seed, static_cast<std::uint64_t>(domain)), index);
}

std::pair<Manifest, Manifest> generate_pair_dataset(const SceneSpec& spec, const DomainGap& gap, std::size_t n_source,
                                                    std::size_t n_target, const std::filesystem::path& out_dir) {
  spec.validate();
  gap.validate(spec.num_classes);
  if (n_source == 0) throw ConfigError("generate_pair_dataset: source domain must contain at least one image");
  if (n_target == 0) throw ConfigError("generate_pair_dataset: target domain must contain at least one image");

  auto make_domain = [&](int domain, const std::string& name, std::size_t count) {
    const auto dir = out_dir / name;
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "labels", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    Manifest m;
    m.domain = name;
    m.seed = spec.seed;
    m.num_classes = spec.num_classes;
    m.scene_digest = digest_hex(spec.canonical());
    m.gap_digest = digest_hex(domain == 0 ? DomainGap::identity(spec.num_classes).canonical() : gap.canonical());
    m.root = out_dir;
    for (std::size_t i = 0; i < count; ++i) {
      const auto seed = scene_seed(spec, domain, i);
      const auto scene = generate_scene(spec, seed);
      const auto labels = rasterize_labels(scene, spec);
      Image image;
      if (domain == 0) {
        image = render_scene(scene, spec);
      } else {
        DomainGap g = gap;
        if (gap.intensity_spread > 0.0) {
          Rng intensity_rng(derive_seed(seed, 0x5CA1E));
          g = gap.scaled(intensity_rng.uniform(1.0 - gap.intensity_spread, 1.0));
        }
        image = render_scene(scene, spec, g.palette_shift);
        if (gap.hue_spread > 0.0) {
          Rng hue_rng(derive_seed(seed, 0x4E3));
          shift_hue_saturation_value(image, hue_rng.uniform(-gap.hue_spread, gap.hue_spread), 0.0, 0.0);
        }
        Rng noise(derive_seed(seed, 0xA0153));
        apply_domain_gap(image, g, noise);
      }
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%05zu.png", i);
      ManifestEntry e{name + "/images/" + stem, name + "/labels/" + stem};
      write_image_png(out_dir / e.image, image);
      write_label_png(out_dir / e.label, labels);
      m.entries.push_back(std::move(e));
    }
    m.write(out_dir / (name + ".manifest"));
    return m;
  };
  auto source = make_domain(0, "source", n_source);
  auto target = make_domain(1, "target", n_target);
  return {std::move(source), std::move(target)};
}

Sample load_sample(const Manifest& manifest, std::size_t index) {
  if (index >= manifest.size()) {
    throw ValidationError("sample index " + std::to_string(index) + " out of range for manifest of size " +
                          std::to_string(manifest.size()));
  }
  const auto& e = manifest.entries[index];
  Sample s;
  s.image = read_image_png(manifest.root / e.image);
  s.label = read_label_png(manifest.root / e.label);
  if (s.image.height != s.label.height || s.image.width != s.label.width) {
    throw ValidationError((manifest.root / e.label).string() + ": label extent differs from image");
  }
  for (auto v : s.label.data) {
    if (v != kIgnoreLabel && v >= manifest.num_classes) {
      throw ValidationError((manifest.root / e.label).string() + ": label value " + std::to_string(v) +
                            " >= num_classes " + std::to_string(manifest.num_classes));
    }
  }
  return s;
}

std::vector<Sample> load_all(const Manifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) out.push_back(load_sample(manifest, i));
  return out;
}

}  // namespace pixmatch
