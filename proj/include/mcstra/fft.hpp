#pragma once

#include <cmath>

#include "mcstra/complex_raster.hpp"

namespace mcstra {

namespace detail {

// In-place iterative radix-2 Cooley-Tukey on a strided line.
// sign = -1 forward, +1 inverse (no scaling applied here).
inline void fft_radix2(cplx* a, int n, size_t stride, int sign) {
  // bit reversal
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[size_t(i) * stride], a[size_t(j) * stride]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / len;
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx& u = a[size_t(i + k) * stride];
        cplx& v = a[size_t(i + k + len / 2) * stride];
        const cplx t = v * w;
        v = u - t;
        u = u + t;
        w *= wlen;
      }
    }
  }
}

// Circular half-shift along both axes. For even sizes this is its own
// inverse, so it serves as both fftshift and ifftshift.
inline ComplexRaster half_shift(const ComplexRaster& r) {
  ComplexRaster out(r.height, r.width);
  const int sh = r.height / 2, sw = r.width / 2;
  for (int i = 0; i < r.height; ++i) {
    const int si = (i + sh) % r.height;
    for (int j = 0; j < r.width; ++j) {
      out.at(si, (j + sw) % r.width) = r.at(i, j);
    }
  }
  return out;
}

inline ComplexRaster fft2_raw(const ComplexRaster& r, int sign) {
  ComplexRaster out = r;
  for (int i = 0; i < out.height; ++i) fft_radix2(&out.at(i, 0), out.width, 1, sign);
  for (int j = 0; j < out.width; ++j) fft_radix2(&out.at(0, j), out.height, out.width, sign);
  return out;
}

}  // namespace detail

// Centered orthonormal 2D Fourier transform: shift, radix-2 transform,
// shift back, scale by 1/sqrt(h*w). Zero frequency lands at
// (h/2, w/2). ifft2c is the exact inverse and adjoint.
inline ComplexRaster fft2c(const ComplexRaster& img) {
  ComplexRaster out = detail::half_shift(detail::fft2_raw(detail::half_shift(img), -1));
  const double scale = 1.0 / std::sqrt(double(img.height) * img.width);
  for (cplx& v : out.data) v *= scale;
  return out;
}

inline ComplexRaster ifft2c(const ComplexRaster& ksp) {
  ComplexRaster out = detail::half_shift(detail::fft2_raw(detail::half_shift(ksp), +1));
  const double scale = 1.0 / std::sqrt(double(ksp.height) * ksp.width);
  for (cplx& v : out.data) v *= scale;
  return out;
}

}  // namespace mcstra
