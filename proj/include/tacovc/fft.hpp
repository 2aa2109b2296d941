#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "tacovc/error.hpp"

namespace tacovc::detail {

// Iterative radix-2 FFT. Sizes here are always powers of two (n_fft = 1024),
// so a dependency-free implementation is enough.
inline void fftRadix2(std::vector<std::complex<float>>& a, bool inverse) {
  const size_t n = a.size();
  require(n > 0 && (n & (n - 1)) == 0, ErrorCode::InvalidInput, "FFT size must be a power of two");

  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u(a[i + k]);
        const std::complex<double> v = std::complex<double>(a[i + k + len / 2]) * w;
        a[i + k] = std::complex<float>(u + v);
        a[i + k + len / 2] = std::complex<float>(u - v);
        w *= wl;
      }
    }
  }

  if (inverse) {
    const float inv = 1.0f / static_cast<float>(n);
    for (auto& x : a) x *= inv;
  }
}

}  // namespace tacovc::detail
