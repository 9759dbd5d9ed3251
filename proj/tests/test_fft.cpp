#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "pixmatch/fft.hpp"
#include "support/oracles.hpp"

using namespace pixmatch;

namespace {

std::vector<double> random_plane(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<double> v(h * w);
  for (auto& x : v) x = rng.uniform();
  return v;
}

double max_abs_diff(const Spectrum& a, const Spectrum& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

}  // namespace

TEST(Fft2, ConstantImageIsDcOnly) {
  const std::size_t h = 6, w = 10;
  const std::vector<double> x(h * w, 0.3);
  const auto s = fft2(x, h, w);
  EXPECT_NEAR(s.at(0, 0).real(), 0.3 * h * w, 1e-12);
  EXPECT_NEAR(s.at(0, 0).imag(), 0.0, 1e-12);
  for (std::size_t i = 1; i < s.data.size(); ++i) EXPECT_LT(std::abs(s.data[i]), 1e-12);
}

TEST(Fft2, ImpulseGivesAllOnes) {
  const std::size_t h = 7, w = 5;
  std::vector<double> x(h * w, 0.0);
  x[0] = 1.0;
  const auto s = fft2(x, h, w);
  for (const auto& v : s.data) {
    EXPECT_NEAR(v.real(), 1.0, 1e-12);
    EXPECT_NEAR(v.imag(), 0.0, 1e-12);
  }
}

TEST(Fft2, MatchesNaiveDft7x5) {
  Rng rng(7);
  const auto x = random_plane(7, 5, rng);
  EXPECT_LT(max_abs_diff(fft2(x, 7, 5), oracle::naive_dft2(x, 7, 5)), 1e-9);
}

TEST(Fft2, MatchesNaiveDftUpTo16) {
  Rng rng(11);
  for (std::size_t h = 1; h <= 16; ++h) {
    for (std::size_t w = 1; w <= 16; ++w) {
      const auto x = random_plane(h, w, rng);
      EXPECT_LT(max_abs_diff(fft2(x, h, w), oracle::naive_dft2(x, h, w)), 1e-9) << h << "x" << w;
    }
  }
}

TEST(Fft2, ComplexInputMatchesRealOverload) {
  Rng rng(3);
  const auto x = random_plane(9, 12, rng);
  Spectrum c{9, 12, {}};
  for (double v : x) c.data.emplace_back(v, 0.0);
  EXPECT_LT(max_abs_diff(fft2(c), fft2(x, 9, 12)), 1e-12);
}

TEST(Fft2, RoundTripAndParseval) {
  Rng rng(5);
  for (std::size_t h : {1, 2, 7, 8, 13, 16, 64}) {
    for (std::size_t w : {1, 5, 8, 16, 31}) {
      const auto x = random_plane(h, w, rng);
      const auto spec = fft2(x, h, w);
      const auto back = ifft2(spec);
      double err = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back.data[i] - x[i]));
      EXPECT_LT(err, 1e-9) << h << "x" << w;

      double energy = 0.0, spectral = 0.0;
      for (double v : x) energy += v * v;
      for (const auto& v : spec.data) spectral += std::norm(v);
      spectral /= static_cast<double>(h * w);
      EXPECT_LT(std::abs(energy - spectral) / energy, 1e-9) << h << "x" << w;
    }
  }
}

TEST(Fft2, RealInputHasHermitianSpectrum) {
  Rng rng(9);
  const std::size_t h = 6, w = 9;
  const auto s = fft2(random_plane(h, w, rng), h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto mirrored = std::conj(s.at((h - y) % h, (w - x) % w));
      EXPECT_LT(std::abs(s.at(y, x) - mirrored), 1e-9);
    }
  }
}
