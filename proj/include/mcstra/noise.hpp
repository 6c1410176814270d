#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mcstra/mask.hpp"

namespace mcstra {

// snr_db == +infinity means "no noise".
inline constexpr double kSnrInfinite = std::numeric_limits<double>::infinity();

// Adds i.i.d. circular complex Gaussian noise so that
// 10*log10(signal power / per-entry noise variance) == snr_db.
// Signal power is the mean squared magnitude over sampled entries; when
// a mask is given, only sampled columns count and only they receive
// noise (unsampled columns stay exactly zero). Without a mask every
// entry is treated as sampled.
inline ComplexRaster add_complex_noise(const ComplexRaster& ksp, double snr_db,
                                       std::uint64_t seed,
                                       const SamplingMask* mask = nullptr) {
  if (snr_db == kSnrInfinite) return ksp;
  if (mask && mask->width != ksp.width) {
    throw std::invalid_argument("add_complex_noise: mask width mismatch");
  }
  double power = 0.0;
  size_t n = 0;
  for (int i = 0; i < ksp.height; ++i) {
    for (int j = 0; j < ksp.width; ++j) {
      if (mask && !mask->lines[j]) continue;
      power += std::norm(ksp.at(i, j));
      ++n;
    }
  }
  if (n == 0 || power == 0.0) {
    throw std::domain_error("add_complex_noise: zero signal, SNR undefined");
  }
  power /= double(n);
  const double sigma2 = power / std::pow(10.0, snr_db / 10.0);
  const double comp_std = std::sqrt(sigma2 / 2.0);  // per real/imag component
  Rng rng(seed);
  ComplexRaster out = ksp;
  for (int i = 0; i < out.height; ++i) {
    for (int j = 0; j < out.width; ++j) {
      if (mask && !mask->lines[j]) continue;
      const double re = rng.gaussian() * comp_std;
      const double im = rng.gaussian() * comp_std;
      out.at(i, j) += cplx(re, im);
    }
  }
  return out;
}

}  // namespace mcstra
