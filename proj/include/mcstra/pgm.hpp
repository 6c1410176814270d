#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcstra {

// Binary PGM (P5), 16-bit big-endian samples. Intensities are mapped
// linearly from [0, peak] to [0, 65535]; peak <= 0 means "use max(img)".
inline void save_pgm16(const std::vector<double>& img, int h, int w, const std::string& path,
                       double peak = 0.0) {
  if (int(img.size()) != h * w) throw std::invalid_argument("save_pgm16: size mismatch");
  if (peak <= 0.0) {
    for (double v : img) peak = std::max(peak, v);
    if (peak <= 0.0) peak = 1.0;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n65535\n";
  for (double v : img) {
    const double t = std::clamp(v / peak, 0.0, 1.0);
    const std::uint16_t s = std::uint16_t(t * 65535.0 + 0.5);
    const unsigned char b[2] = {static_cast<unsigned char>(s >> 8),
                                static_cast<unsigned char>(s & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace mcstra
