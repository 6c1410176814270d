#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcstra/complex_raster.hpp"
#include "mcstra/rng.hpp"

namespace mcstra {

struct Ellipse {
  double cx, cy;        // center in [-1, 1]
  double a, b;          // semi-axes
  double theta;         // rotation, radians
  double intensity;     // additive
};

struct PhantomSpec {
  std::vector<Ellipse> ellipses;
  double norm = 1.0;  // divisor applied before the [0,1] clamp
};

// The classic ten-ellipse head phantom.
inline PhantomSpec shepp_logan_spec() {
  const double d = M_PI / 180.0;
  PhantomSpec s;
  s.ellipses = {
      {0.0, 0.0, 0.69, 0.92, 0.0, 2.0},
      {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98},
      {0.22, 0.0, 0.11, 0.31, -18.0 * d, -0.02},
      {-0.22, 0.0, 0.16, 0.41, 18.0 * d, -0.02},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.01},
      {0.0, 0.1, 0.046, 0.046, 0.0, 0.01},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.01},
      {-0.08, -0.605, 0.046, 0.023, 0.0, 0.01},
      {0.0, -0.605, 0.023, 0.023, 0.0, 0.01},
      {0.06, -0.605, 0.023, 0.046, 0.0, 0.01},
  };
  s.norm = 2.0;
  return s;
}

// Center-of-pixel membership rasterization, normalized and clamped to
// [0, 1]. Output is real (zero imaginary channel).
inline ComplexRaster render_phantom(const PhantomSpec& spec, int h, int w) {
  ComplexRaster img(h, w);
  for (int i = 0; i < h; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / h;
    for (int j = 0; j < w; ++j) {
      const double x = 2.0 * (j + 0.5) / w - 1.0;
      double v = 0.0;
      for (const Ellipse& e : spec.ellipses) {
        const double dx = x - e.cx, dy = y - e.cy;
        const double ct = std::cos(e.theta), st = std::sin(e.theta);
        const double u = dx * ct + dy * st;
        const double t = -dx * st + dy * ct;
        if (u * u / (e.a * e.a) + t * t / (e.b * e.b) <= 1.0) v += e.intensity;
      }
      v = std::clamp(v / spec.norm, 0.0, 1.0);
      img.at(i, j) = cplx(v, 0.0);
    }
  }
  return img;
}

inline ComplexRaster shepp_logan(int h, int w) { return render_phantom(shepp_logan_spec(), h, w); }

// Deterministic jitter of centers (+-0.1), axes (+-10%), rotations
// (+-0.2 rad) and intensities (+-10%). Seed 0 is the zero-jitter
// convention and reproduces the base spec exactly.
inline PhantomSpec perturb_spec(const PhantomSpec& base, std::uint64_t seed) {
  if (seed == 0) return base;
  PhantomSpec out = base;
  Rng rng(seed);
  for (Ellipse& e : out.ellipses) {
    e.cx += rng.uniform(-0.1, 0.1);
    e.cy += rng.uniform(-0.1, 0.1);
    e.a *= 1.0 + rng.uniform(-0.1, 0.1);
    e.b *= 1.0 + rng.uniform(-0.1, 0.1);
    e.theta += rng.uniform(-0.2, 0.2);
    e.intensity *= 1.0 + rng.uniform(-0.1, 0.1);
  }
  return out;
}

inline ComplexRaster perturbed_phantom(const PhantomSpec& base, std::uint64_t seed, int h, int w) {
  return render_phantom(perturb_spec(base, seed), h, w);
}

// Optional smooth synthetic phase: linear plus quadratic ramps with
// seed-derived coefficients, applied as exp(i phi) to the magnitude.
inline ComplexRaster apply_phase_map(const ComplexRaster& mag, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9a5eu));
  const double ax = rng.uniform(-2.0, 2.0), ay = rng.uniform(-2.0, 2.0);
  const double qx = rng.uniform(-1.0, 1.0), qy = rng.uniform(-1.0, 1.0);
  ComplexRaster out = mag;
  for (int i = 0; i < out.height; ++i) {
    const double y = 2.0 * (i + 0.5) / out.height - 1.0;
    for (int j = 0; j < out.width; ++j) {
      const double x = 2.0 * (j + 0.5) / out.width - 1.0;
      const double phi = ax * x + ay * y + qx * x * x + qy * y * y;
      out.at(i, j) *= cplx(std::cos(phi), std::sin(phi));
    }
  }
  return out;
}

}  // namespace mcstra
