#include <gtest/gtest.h>

#include "mcstra/psf.hpp"
#include "mcstra/rng.hpp"

using namespace mcstra;

namespace {

// Direct O(N^2) circular convolution about the center pixel. Oracle for
// the transform-domain path; deliberately brute force.
ComplexRaster circ_conv_centered(const ComplexRaster& x, const ComplexRaster& k) {
  const int h = x.height, w = x.width;
  ComplexRaster out(h, w);
  const int ch = h / 2, cw = w / 2;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      cplx acc(0.0, 0.0);
      for (int p = 0; p < h; ++p) {
        for (int q = 0; q < w; ++q) {
          const int ki = ((i - p + ch) % h + h) % h;
          const int kj = ((j - q + cw) % w + w) % w;
          acc += x.at(p, q) * k.at(ki, kj);
        }
      }
      out.at(i, j) = acc;
    }
  }
  return out;
}

ComplexRaster random_image(int h, int w, std::uint64_t seed) {
  ComplexRaster r(h, w);
  Rng rng(seed);
  for (cplx& v : r.data) v = cplx(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  return r;
}

}  // namespace

TEST(Psf, FullMaskIsUnitCenterDelta) {
  for (int width : {8, 16, 64}) {
    SamplingMask m(width, width);
    std::fill(m.lines.begin(), m.lines.end(), 1);
    Psf p = psf_of_mask(m, width);
    EXPECT_NEAR(std::abs(p.raster.at(width / 2, width / 2)), 1.0, 1e-12);
    double off = 0.0;
    for (int i = 0; i < width; ++i) {
      for (int j = 0; j < width; ++j) {
        if (i != width / 2 || j != width / 2) off = std::max(off, std::abs(p.raster.at(i, j)));
      }
    }
    EXPECT_LT(off, 1e-12);
  }
}

TEST(Psf, EveryOtherColumnGivesTwoGhosts) {
  SamplingMask m(8, 0);
  for (int j = 0; j < 8; j += 2) m.lines[j] = 1;
  Psf p = psf_of_mask(m, 8);
  // two impulses of magnitude 1/2, width/2 columns apart, on the center row
  EXPECT_NEAR(std::abs(p.raster.at(4, 4)), 0.5, 1e-12);
  EXPECT_NEAR(std::abs(p.raster.at(4, 0)), 0.5, 1e-12);
  double rest = 0.0;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      if (i == 4 && (j == 0 || j == 4)) continue;
      rest = std::max(rest, std::abs(p.raster.at(i, j)));
    }
  }
  EXPECT_LT(rest, 1e-12);
}

TEST(Psf, ZeroFilledEqualsCircularConvolution) {
  // convolution-theorem oracle over >= 20 random (mask, image) pairs
  for (std::uint64_t s = 0; s < 20; ++s) {
    const int n = s % 2 == 0 ? 16 : 32;
    SamplingMask m = random_line_mask(n, 3.0, 0.1, 1000 + s);
    ComplexRaster x = random_image(n, n, 2000 + s);
    ComplexRaster zf = ifft2c(apply_mask(fft2c(x), m));
    ComplexRaster conv = circ_conv_centered(x, psf_of_mask(m, n).raster);
    EXPECT_LT(max_abs_diff(zf, conv), 1e-5) << "seed " << s;
  }
}

TEST(Psf, DefaultHeightIsSquare) {
  SamplingMask m = random_line_mask(16, 2.0, 0.2, 5);
  Psf p = psf_of_mask(m);
  EXPECT_EQ(p.raster.height, 16);
  EXPECT_EQ(p.raster.width, 16);
}
