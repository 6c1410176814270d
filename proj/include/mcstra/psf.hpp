#pragma once

#include <cmath>

#include "mcstra/fft.hpp"
#include "mcstra/mask.hpp"

namespace mcstra {

// Image-domain response of a sampling pattern.
struct Psf {
  ComplexRaster raster;
};

// Inverse transform of the 2D mask raster, scaled so the all-ones mask
// yields a unit delta at the center pixel. With this normalization the
// zero-filled reconstruction equals the reference image circularly
// convolved (about the center pixel) with the PSF.
inline Psf psf_of_mask(const SamplingMask& m, int height) {
  ComplexRaster r = ifft2c(mask_raster(m, height));
  const double scale = 1.0 / std::sqrt(double(height) * m.width);
  for (cplx& v : r.data) v *= scale;
  return Psf{std::move(r)};
}

inline Psf psf_of_mask(const SamplingMask& m) { return psf_of_mask(m, m.width); }

}  // namespace mcstra
