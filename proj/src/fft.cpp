#include "pixmatch/fft.hpp"

#include <fftw3.h>

#include "pixmatch/errors.hpp"

namespace pixmatch {

namespace {

void check_extents(const Spectrum& s) {
  if (s.height == 0 || s.width == 0) throw ShapeError("fft2: empty extent");
  if (s.data.size() != s.height * s.width) throw ShapeError("fft2: data size does not match extents");
}

// FFTW_ESTIMATE plans are chosen without timing, so the same sizes always get the same algorithm.
void transform(Spectrum& s, int sign) {
  check_extents(s);
  auto* buf = reinterpret_cast<fftw_complex*>(s.data.data());
  fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(s.height), static_cast<int>(s.width), buf, buf, sign, FFTW_ESTIMATE);
  if (!plan) throw Error("fft2: could not create transform plan");
  fftw_execute(plan);
  fftw_destroy_plan(plan);
}

}  // namespace

Spectrum fft2(std::span<const double> real, std::size_t height, std::size_t width) {
  if (real.size() != height * width) throw ShapeError("fft2: data size does not match extents");
  Spectrum s{height, width, std::vector<Complex>(real.begin(), real.end())};
  transform(s, FFTW_FORWARD);
  return s;
}

Spectrum fft2(Spectrum input) {
  transform(input, FFTW_FORWARD);
  return input;
}

Spectrum ifft2(Spectrum spectrum) {
  transform(spectrum, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(spectrum.height * spectrum.width);
  for (auto& v : spectrum.data) v *= scale;
  return spectrum;
}

}  // namespace pixmatch
