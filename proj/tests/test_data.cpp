#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "pixmatch/data.hpp"
#include "pixmatch/errors.hpp"
#include "pixmatch/png_io.hpp"
#include "support/temp_dir.hpp"

using namespace pixmatch;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

SceneSpec small_spec(std::uint64_t seed = 0) {
  SceneSpec s;
  s.image_size = 32;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Generate, SameSeedGivesIdenticalFiles) {
  TempDir a("gen_a"), b("gen_b");
  const auto gap = DomainGap::default_gap(5);
  const auto [sa, ta] = generate_pair_dataset(small_spec(4), gap, 6, 5, a.path());
  const auto [sb, tb] = generate_pair_dataset(small_spec(4), gap, 6, 5, b.path());
  ASSERT_EQ(sa.size(), 6u);
  ASSERT_EQ(ta.size(), 5u);
  for (const auto* pair : {&sa, &ta}) {
    const auto& other = pair == &sa ? sb : tb;
    for (std::size_t i = 0; i < pair->size(); ++i) {
      EXPECT_EQ(slurp(a.path() / pair->entries[i].image), slurp(b.path() / other.entries[i].image));
      EXPECT_EQ(slurp(a.path() / pair->entries[i].label), slurp(b.path() / other.entries[i].label));
    }
  }
  EXPECT_EQ(slurp(a / "target.manifest"), slurp(b / "target.manifest"));
}

TEST(Generate, DifferentSeedsDiffer) {
  TempDir a("gen_a"), b("gen_b");
  generate_pair_dataset(small_spec(1), DomainGap::default_gap(5), 2, 1, a.path());
  generate_pair_dataset(small_spec(2), DomainGap::default_gap(5), 2, 1, b.path());
  const auto ma = Manifest::read(a / "source.manifest");
  const auto mb = Manifest::read(b / "source.manifest");
  EXPECT_NE(slurp(a.path() / ma.entries[0].image), slurp(b.path() / mb.entries[0].image));
}

TEST(Generate, LabelsMatchReRasterizedScenes) {
  TempDir dir("gen_raster");
  const auto spec = small_spec(9);
  const auto [s, t] = generate_pair_dataset(spec, DomainGap::default_gap(5), 8, 8, dir.path());
  int domain = 0;
  for (const auto* m : {&s, &t}) {
    for (std::size_t i = 0; i < m->size(); ++i) {
      const auto expected = rasterize_labels(generate_scene(spec, scene_seed(spec, domain, i)), spec);
      EXPECT_EQ(load_sample(*m, i).label, expected) << m->domain << " " << i;
    }
    ++domain;
  }
}

TEST(Generate, IdentityGapRendersTargetLikeSource) {
  TempDir dir("gen_id");
  const auto spec = small_spec(3);
  const auto [s, t] = generate_pair_dataset(spec, DomainGap::identity(5), 2, 2, dir.path());
  const auto scene = generate_scene(spec, scene_seed(spec, 1, 0));
  const auto rendered = render_scene(scene, spec);
  const auto loaded = load_sample(t, 0).image;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) EXPECT_NEAR(loaded.data[i], rendered.data[i], 0.5 / 255.0 + 1e-12);
}

TEST(Generate, ClassProportionsNearExpected) {
  SceneSpec spec;
  spec.seed = 17;
  const auto expected = expected_class_proportions(spec);
  std::vector<double> counts(spec.num_classes, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto lm = rasterize_labels(generate_scene(spec, scene_seed(spec, 0, i)), spec);
    for (auto v : lm.data) counts[v] += 1.0;
    total += static_cast<double>(lm.data.size());
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const double got = counts[c] / total;
    EXPECT_NEAR(got, expected[c], 0.2 * expected[c]) << "class " << c;
    sum += expected[c];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Generate, Errors) {
  TempDir dir("gen_err");
  EXPECT_THROW(generate_pair_dataset(small_spec(), DomainGap::default_gap(5), 0, 3, dir.path()), ConfigError);
  auto spec = small_spec();
  spec.image_size = 30;
  EXPECT_THROW(generate_pair_dataset(spec, DomainGap::default_gap(5), 1, 1, dir.path()), ConfigError);
  spec = small_spec();
  spec.num_classes = 1;
  EXPECT_THROW(generate_pair_dataset(spec, DomainGap::identity(1), 1, 1, dir.path()), ConfigError);
  EXPECT_THROW(DomainGap::default_gap(5, -1.0), ConfigError);
  auto gap = DomainGap::default_gap(5);
  gap.palette_shift.pop_back();
  EXPECT_THROW(generate_pair_dataset(small_spec(), gap, 1, 1, dir.path()), ConfigError);
}

TEST(Generate, DefaultGapValues) {
  const auto g = DomainGap::default_gap(5);
  EXPECT_EQ(g.noise_sigma, 0.05);
  EXPECT_EQ(g.blur_sigma, 1.0);
  EXPECT_EQ(g.gamma, 1.3);
  for (const auto& s : g.palette_shift) {
    for (double v : s) EXPECT_LE(std::abs(v), 0.25);
  }
  EXPECT_FALSE(g.is_identity());
  EXPECT_TRUE(DomainGap::identity(5).is_identity());
  EXPECT_TRUE(DomainGap::default_gap(5, 0.0).is_identity());
}

TEST(Png, ImageRoundTripWithinQuantization) {
  TempDir dir("png");
  Rng rng(1);
  Image im(7, 9);
  for (auto& v : im.data) v = rng.uniform();
  write_image_png(dir / "a.png", im);
  const auto back = read_image_png(dir / "a.png");
  ASSERT_EQ(back.height, 7u);
  ASSERT_EQ(back.width, 9u);
  for (std::size_t i = 0; i < im.data.size(); ++i) EXPECT_LE(std::abs(back.data[i] - im.data[i]), 0.5 / 255.0 + 1e-12);
}

TEST(Png, LabelRoundTripBitwise) {
  TempDir dir("png");
  LabelMap lm(5, 6);
  for (std::size_t i = 0; i < lm.data.size(); ++i) lm.data[i] = static_cast<std::uint8_t>(i % 4);
  lm.data[3] = kIgnoreLabel;
  write_label_png(dir / "l.png", lm);
  EXPECT_EQ(read_label_png(dir / "l.png"), lm);
}

TEST(Png, CorruptFileNamesPath) {
  TempDir dir("png");
  std::ofstream(dir / "bad.png") << "not a png";
  try {
    read_png(dir / "bad.png");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.png"), std::string::npos);
  }
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
}

TEST(LoadSample, Errors) {
  TempDir dir("load");
  auto [s, t] = generate_pair_dataset(small_spec(), DomainGap::default_gap(5), 2, 1, dir.path());
  EXPECT_THROW(load_sample(s, 2), ValidationError);

  LabelMap bad(32, 32, 0);
  bad.at(3, 3) = 6;  // C + 1
  write_label_png(dir.path() / s.entries[1].label, bad);
  EXPECT_THROW(load_sample(s, 1), ValidationError);

  std::ofstream(dir.path() / s.entries[0].image, std::ios::trunc) << "garbage";
  try {
    load_sample(s, 0);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(s.entries[0].image), std::string::npos);
  }
}

TEST(Manifest, RoundTrip) {
  TempDir dir("manifest");
  Manifest m;
  m.domain = "target";
  m.seed = 42;
  m.num_classes = 5;
  m.scene_digest = digest_hex("scene");
  m.gap_digest = digest_hex("gap");
  m.entries = {{"target/images/0.png", "target/labels/0.png"}, {"target/images/1.png", "target/labels/1.png"}};
  m.write(dir / "t.manifest");
  const auto r = Manifest::read(dir / "t.manifest");
  EXPECT_EQ(r.domain, m.domain);
  EXPECT_EQ(r.seed, m.seed);
  EXPECT_EQ(r.num_classes, m.num_classes);
  EXPECT_EQ(r.scene_digest, m.scene_digest);
  EXPECT_EQ(r.gap_digest, m.gap_digest);
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_EQ(r.entries[1].label, "target/labels/1.png");
  EXPECT_EQ(r.root, dir.path());
}

TEST(Manifest, ReadErrors) {
  TempDir dir("manifest");
  EXPECT_THROW(Manifest::read(dir / "none.manifest"), IoError);
  std::ofstream(dir / "bad.manifest") << "something else\n";
  EXPECT_THROW(Manifest::read(dir / "bad.manifest"), Error);
}

TEST(Digest, Fnv1a) {
  EXPECT_EQ(digest_hex(""), "cbf29ce484222325");
  EXPECT_EQ(digest_hex("a"), "af63dc4c8601ec8c");
}
