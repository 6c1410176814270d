#include <gtest/gtest.h>

#include "mcstra/dc.hpp"
#include "mcstra/rng.hpp"

using namespace mcstra;

namespace {

ComplexRaster random_image(int n, std::uint64_t seed) {
  ComplexRaster r(n, n);
  Rng rng(seed);
  for (cplx& v : r.data) v = cplx(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  return r;
}

double masked_kspace_diff(const ComplexRaster& x, const ComplexRaster& y_meas,
                          const SamplingMask& m) {
  ComplexRaster k = fft2c(x);
  double d = 0.0;
  for (int i = 0; i < k.height; ++i) {
    for (int j = 0; j < k.width; ++j) {
      if (m.lines[j]) d = std::max(d, std::abs(k.at(i, j) - y_meas.at(i, j)));
    }
  }
  return d;
}

}  // namespace

TEST(DataConsistency, HardReplacementPinsSampledLines) {
  const int n = 16;
  SamplingMask m = random_line_mask(n, 2.0, 0.2, 3);
  ComplexRaster truth = random_image(n, 1);
  ComplexRaster y = apply_mask(fft2c(truth), m);
  ComplexRaster x_in = random_image(n, 2);
  ComplexRaster out = data_consistency(x_in, y, m, DcWeight::infinite());
  EXPECT_LT(masked_kspace_diff(out, y, m), 1e-5);
}

TEST(DataConsistency, ConsistentInputIsFixedPoint) {
  const int n = 16;
  SamplingMask m = random_line_mask(n, 2.0, 0.2, 5);
  ComplexRaster x = random_image(n, 4);
  ComplexRaster y = apply_mask(fft2c(x), m);
  ComplexRaster out = data_consistency(x, y, m, DcWeight::infinite());
  EXPECT_LT(max_abs_diff(out, x), 1e-5);
}

TEST(DataConsistency, LambdaOneAverages) {
  // sampled entry with y_c = 2, y_meas = 4 -> (2 + 1*4) / 2 = 3
  const int n = 4;
  SamplingMask m(n, n);
  std::fill(m.lines.begin(), m.lines.end(), 1);
  ComplexRaster yc(n, n);
  yc.at(1, 3) = cplx(2.0, 0.0);
  ComplexRaster x_in = ifft2c(yc);
  ComplexRaster y(n, n);
  y.at(1, 3) = cplx(4.0, 0.0);
  ComplexRaster out = data_consistency(x_in, y, m, DcWeight::finite(1.0));
  ComplexRaster k = fft2c(out);
  EXPECT_NEAR(k.at(1, 3).real(), 3.0, 1e-9);
  EXPECT_NEAR(k.at(1, 3).imag(), 0.0, 1e-9);
}

TEST(DataConsistency, IdempotentUnderHardReplacement) {
  const int n = 32;
  SamplingMask m = random_line_mask(n, 3.0, 0.1, 7);
  ComplexRaster y = apply_mask(fft2c(random_image(n, 8)), m);
  ComplexRaster x = random_image(n, 9);
  ComplexRaster once = data_consistency(x, y, m, DcWeight::infinite());
  ComplexRaster twice = data_consistency(once, y, m, DcWeight::infinite());
  EXPECT_LT(max_abs_diff(once, twice), 1e-6);
}

TEST(DataConsistency, LinearInInputWithZeroMeasurement) {
  // with y = 0 the block is x -> F^H Lambda F x, so f(a x) = a f(x)
  const int n = 16;
  SamplingMask m = random_line_mask(n, 2.0, 0.2, 11);
  ComplexRaster y(n, n);
  ComplexRaster x = random_image(n, 12);
  ComplexRaster xs = x;
  const double a = -2.75;
  for (cplx& v : xs.data) v *= a;
  ComplexRaster fx = data_consistency(x, y, m, DcWeight::finite(0.7));
  ComplexRaster fxs = data_consistency(xs, y, m, DcWeight::finite(0.7));
  for (cplx& v : fx.data) v *= a;
  EXPECT_LT(max_abs_diff(fx, fxs), 1e-9);
}

TEST(DataConsistency, ShapeAndWeightValidation) {
  ComplexRaster a(8, 8), b(8, 16);
  SamplingMask m(8, 0);
  EXPECT_THROW(data_consistency(a, b, m, DcWeight::infinite()), std::invalid_argument);
  EXPECT_THROW(DcWeight::finite(-0.5), std::invalid_argument);
  SamplingMask wide(16, 0);
  ComplexRaster c(8, 8);
  EXPECT_THROW(data_consistency(a, c, wide, DcWeight::infinite()), std::invalid_argument);
}
