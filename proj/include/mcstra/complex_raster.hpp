#pragma once

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcstra {

using cplx = std::complex<double>;

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// H x W complex field, row-major. Serves as both image space and k-space.
// Dimensions must be powers of two (radix-2 transform support).
struct ComplexRaster {
  int height = 0;
  int width = 0;
  std::vector<cplx> data;

  ComplexRaster() = default;
  ComplexRaster(int h, int w) : height(h), width(w), data(size_t(h) * w) {
    if (!is_power_of_two(h) || !is_power_of_two(w)) {
      throw std::invalid_argument("ComplexRaster: dimensions must be powers of two, got " +
                                  std::to_string(h) + "x" + std::to_string(w));
    }
  }

  size_t size() const { return data.size(); }
  cplx& at(int r, int c) { return data[size_t(r) * width + c]; }
  const cplx& at(int r, int c) const { return data[size_t(r) * width + c]; }

  bool same_shape(const ComplexRaster& o) const {
    return height == o.height && width == o.width;
  }
};

inline double max_abs_diff(const ComplexRaster& a, const ComplexRaster& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline double power_sum(const ComplexRaster& a) {
  double s = 0.0;
  for (const cplx& v : a.data) s += std::norm(v);
  return s;
}

// ---- CRAS1 file format ----
// 8-byte magic "CRAS0001", u32 LE height, u32 LE width, then h*w
// little-endian f32 (real, imag) pairs, row-major.

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void put_f32_le(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32_le(os, u);
}

inline float get_f32_le(std::istream& is) {
  std::uint32_t u = get_u32_le(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

inline void save_cras(const ComplexRaster& r, std::ostream& os) {
  os.write("CRAS0001", 8);
  detail::put_u32_le(os, std::uint32_t(r.height));
  detail::put_u32_le(os, std::uint32_t(r.width));
  for (const cplx& v : r.data) {
    detail::put_f32_le(os, float(v.real()));
    detail::put_f32_le(os, float(v.imag()));
  }
}

inline void save_cras(const ComplexRaster& r, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  save_cras(r, os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline ComplexRaster load_cras(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "CRAS0001", 8) != 0) {
    throw std::runtime_error("not a CRAS1 stream (bad magic)");
  }
  const std::uint32_t h = detail::get_u32_le(is);
  const std::uint32_t w = detail::get_u32_le(is);
  if (!is || h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20)) {
    throw std::runtime_error("CRAS1: bad dimensions");
  }
  ComplexRaster r{int(h), int(w)};
  for (size_t i = 0; i < r.size(); ++i) {
    const float re = detail::get_f32_le(is);
    const float im = detail::get_f32_le(is);
    r.data[i] = cplx(re, im);
  }
  if (!is) throw std::runtime_error("CRAS1: truncated payload");
  return r;
}

inline ComplexRaster load_cras(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return load_cras(is);
}

}  // namespace mcstra
