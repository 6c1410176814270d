#pragma once

#include <stdexcept>

#include "mcstra/fft.hpp"
#include "mcstra/mask.hpp"

namespace mcstra {

// Data-consistency weight. infinite() is the noiseless convention:
// sampled k-space entries are replaced by the measurement outright.
struct DcWeight {
  double lambda = 0.0;
  bool is_infinite = false;

  static DcWeight infinite() { return DcWeight{0.0, true}; }
  static DcWeight finite(double l) {
    if (l < 0.0) throw std::invalid_argument("DcWeight: lambda must be >= 0");
    return DcWeight{l, false};
  }

  // Multiplier applied to the network k-space on sampled entries.
  double keep_factor() const { return is_infinite ? 0.0 : 1.0 / (1.0 + lambda); }
  // Multiplier applied to the measured k-space on sampled entries.
  double feed_factor() const { return is_infinite ? 1.0 : lambda / (1.0 + lambda); }
};

// k-space correction: unsampled entries pass through, sampled entries
// become (y_c + lambda * y_meas) / (1 + lambda). Inputs and output are
// image-space rasters; y_meas is k-space, zero on unsampled lines.
inline ComplexRaster data_consistency(const ComplexRaster& x_in, const ComplexRaster& y_meas,
                                      const SamplingMask& m, const DcWeight& w) {
  if (!x_in.same_shape(y_meas)) {
    throw std::invalid_argument("data_consistency: shape mismatch");
  }
  if (x_in.width != m.width) {
    throw std::invalid_argument("data_consistency: mask width mismatch");
  }
  ComplexRaster ksp = fft2c(x_in);
  const double keep = w.keep_factor();
  const double feed = w.feed_factor();
  for (int i = 0; i < ksp.height; ++i) {
    for (int j = 0; j < ksp.width; ++j) {
      if (m.lines[j]) ksp.at(i, j) = keep * ksp.at(i, j) + feed * y_meas.at(i, j);
    }
  }
  return ifft2c(ksp);
}

}  // namespace mcstra
