#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcstra/complex_raster.hpp"
#include "mcstra/rng.hpp"

namespace mcstra {

inline int round_half_up(double x) { return int(std::floor(x + 0.5)); }

// Binary phase-encode line mask. lines[j] == 1 means column j of
// k-space is sampled; the value broadcasts down every row.
struct SamplingMask {
  int width = 0;
  std::vector<std::uint8_t> lines;
  int center_count = 0;

  SamplingMask() = default;
  SamplingMask(int w, int cc) : width(w), lines(w, 0), center_count(cc) {}

  int sampled_count() const {
    int n = 0;
    for (auto v : lines) n += v;
    return n;
  }
};

namespace detail {

// Contiguous band of `count` lines centered at floor(width/2).
inline int band_start(int width, int count) { return width / 2 - count / 2; }

inline void set_center_band(SamplingMask& m, int count) {
  const int s = band_start(m.width, count);
  if (s < 0 || s + count > m.width) {
    throw std::invalid_argument("center band of " + std::to_string(count) +
                                " lines does not fit in width " + std::to_string(m.width));
  }
  for (int j = s; j < s + count; ++j) m.lines[j] = 1;
}

}  // namespace detail

// Random Cartesian mask: fully sampled center band of
// round_half_up(center_frac * width) lines, each remaining line kept
// independently with p = (width/accel - center) / (width - center).
inline SamplingMask random_line_mask(int width, double accel, double center_frac,
                                     std::uint64_t seed) {
  if (width < 4) throw std::invalid_argument("random_line_mask: width must be >= 4");
  if (accel < 1.0) throw std::invalid_argument("random_line_mask: accel must be >= 1");
  if (center_frac <= 0.0 || center_frac > 1.0) {
    throw std::invalid_argument("random_line_mask: center_frac must be in (0, 1]");
  }
  const int center = round_half_up(center_frac * width);
  SamplingMask m(width, center);
  detail::set_center_band(m, center);
  double p = (double(width) / accel - center) / double(width - center);
  p = std::min(1.0, std::max(0.0, p));
  Rng rng(seed);
  for (int j = 0; j < width; ++j) {
    const double u = rng.uniform();  // one draw per line, mask independent of band layout
    if (!m.lines[j] && u < p) m.lines[j] = 1;
  }
  return m;
}

// Equispaced mask: center band plus every line with index == offset (mod accel).
inline SamplingMask equispaced_line_mask(int width, int accel, double center_frac,
                                         int offset) {
  if (width < 1) throw std::invalid_argument("equispaced_line_mask: width must be >= 1");
  if (accel < 1) throw std::invalid_argument("equispaced_line_mask: accel must be >= 1");
  if (offset < 0 || offset >= accel) {
    throw std::invalid_argument("equispaced_line_mask: offset must be in [0, accel)");
  }
  const int center = center_frac > 0.0 ? round_half_up(center_frac * width) : 0;
  SamplingMask m(width, center);
  if (center > 0) detail::set_center_band(m, center);
  for (int j = offset; j < width; j += accel) m.lines[j] = 1;
  return m;
}

inline ComplexRaster apply_mask(const ComplexRaster& ksp, const SamplingMask& m) {
  if (ksp.width != m.width) {
    throw std::invalid_argument("apply_mask: raster width " + std::to_string(ksp.width) +
                                " != mask width " + std::to_string(m.width));
  }
  ComplexRaster out = ksp;
  for (int i = 0; i < out.height; ++i) {
    for (int j = 0; j < out.width; ++j) {
      if (!m.lines[j]) out.at(i, j) = cplx(0.0, 0.0);
    }
  }
  return out;
}

// Low/high frequency band partition: M_l is a contiguous center band of
// 2 * round_half_up(center_frac * width) lines, M_h its complement.
// M_l + M_h covers every line exactly once.
inline std::pair<SamplingMask, SamplingMask> partition_band_masks(int width,
                                                                  double center_frac) {
  const int band = 2 * round_half_up(center_frac * width);
  if (band > width) {
    throw std::invalid_argument("partition_band_masks: band of " + std::to_string(band) +
                                " lines exceeds width " + std::to_string(width));
  }
  SamplingMask low(width, band);
  if (band > 0) detail::set_center_band(low, band);
  SamplingMask high(width, 0);
  for (int j = 0; j < width; ++j) high.lines[j] = low.lines[j] ? 0 : 1;
  return {low, high};
}

// Expands the line mask to a full raster (1 or 0 broadcast down rows).
inline ComplexRaster mask_raster(const SamplingMask& m, int height) {
  ComplexRaster r(height, m.width);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < m.width; ++j) r.at(i, j) = cplx(m.lines[j] ? 1.0 : 0.0, 0.0);
  }
  return r;
}

// ---- mask text format: one line of '0'/'1' characters plus newline ----

inline void save_mask(const SamplingMask& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  std::string s(m.width, '0');
  for (int j = 0; j < m.width; ++j) {
    if (m.lines[j]) s[j] = '1';
  }
  os << s << "\n";
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline SamplingMask load_mask(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty mask file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  SamplingMask m(int(line.size()), 0);
  for (size_t j = 0; j < line.size(); ++j) {
    if (line[j] == '1') {
      m.lines[j] = 1;
    } else if (line[j] != '0') {
      throw std::runtime_error("bad character in mask file: " + path);
    }
  }
  // recover the contiguous all-ones center run
  const int c = m.width / 2;
  if (m.width > 0 && m.lines[c]) {
    int lo = c, hi = c;
    while (lo > 0 && m.lines[lo - 1]) --lo;
    while (hi + 1 < m.width && m.lines[hi + 1]) ++hi;
    m.center_count = hi - lo + 1;
  }
  return m;
}

}  // namespace mcstra
