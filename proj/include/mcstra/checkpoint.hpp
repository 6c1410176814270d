#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mcstra/complex_raster.hpp"
#include "mcstra/tensor.hpp"

namespace mcstra {

// MCKP1 container: 8-byte magic "MCKP0001", u32 LE entry count, then
// per entry u16 LE name length, name bytes, u8 rank, rank u32 LE dims,
// little-endian f32 payload.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

inline void put_u16_le(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t get_u16_le(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}

}  // namespace detail

inline void write_checkpoint(const std::vector<CheckpointEntry>& entries,
                             const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("MCKP0001", 8);
  detail::put_u32_le(os, std::uint32_t(entries.size()));
  for (const CheckpointEntry& e : entries) {
    if (e.name.size() > 0xffff) throw std::invalid_argument("checkpoint: name too long");
    detail::put_u16_le(os, std::uint16_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    if (e.shape.size() > 0xff) throw std::invalid_argument("checkpoint: rank too large");
    const unsigned char rank = static_cast<unsigned char>(e.shape.size());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : e.shape) detail::put_u32_le(os, std::uint32_t(d));
    for (float v : e.data) detail::put_f32_le(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "MCKP0001", 8) != 0) {
    throw std::runtime_error("not an MCKP1 checkpoint: " + path);
  }
  const std::uint32_t count = detail::get_u32_le(is);
  std::vector<CheckpointEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint16_t len = detail::get_u16_le(is);
    e.name.resize(len);
    is.read(e.name.data(), len);
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    size_t n = 1;
    for (int r = 0; r < int(rank); ++r) {
      const std::uint32_t d = detail::get_u32_le(is);
      e.shape.push_back(int(d));
      n *= d;
    }
    e.data.resize(n);
    for (size_t k = 0; k < n; ++k) e.data[k] = detail::get_f32_le(is);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    out.push_back(std::move(e));
  }
  return out;
}

// Fills named tensors from checkpoint entries; every tensor must be
// present with a matching shape.
template <typename T, class Visitable>
void restore_tensors(Visitable& target, const std::string& prefix,
                     const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const CheckpointEntry& e : entries) by_name[e.name] = &e;
  visit_params(target, prefix, [&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint is missing parameter " + name);
    }
    if (it->second->shape != t.shape) {
      throw std::runtime_error("checkpoint shape mismatch for parameter " + name + ": file has " +
                               shape_str(it->second->shape) + ", model wants " +
                               shape_str(t.shape));
    }
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = T(it->second->data[i]);
  });
}

}  // namespace mcstra
