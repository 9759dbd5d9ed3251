#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace pixmatch {

using Complex = std::complex<double>;

/// Row-major H x W complex array.
struct Spectrum {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Complex> data;

  Complex& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  const Complex& at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

/// Unnormalised forward 2-D DFT: X[k,l] = sum x[y,x] exp(-2 pi i (ky/H + lx/W)).
Spectrum fft2(std::span<const double> real, std::size_t height, std::size_t width);
Spectrum fft2(Spectrum input);
/// Inverse transform including the 1/(H*W) factor.
Spectrum ifft2(Spectrum spectrum);

}  // namespace pixmatch
