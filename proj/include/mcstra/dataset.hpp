#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mcstra/mask.hpp"
#include "mcstra/phantom.hpp"

namespace mcstra {

// Slices sharing a volume id share one undersampling mask.
struct DatasetRecord {
  ComplexRaster image;
  int volume_id = 0;
  int slice_index = 0;
  bool train = true;
};

struct Dataset {
  int height = 0, width = 0;
  std::vector<DatasetRecord> records;

  std::vector<size_t> split_indices(bool train) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i) {
      if (records[i].train == train) out.push_back(i);
    }
    return out;
  }
};

// Deterministic synthetic dataset: jittered head phantoms, volume-level
// train/val split (no slice leakage across splits).
inline Dataset build_dataset(int n_volumes, int slices_per_volume, int h, int w,
                             double split_frac, std::uint64_t seed, bool with_phase = false) {
  if (n_volumes < 1 || slices_per_volume < 1) {
    throw std::invalid_argument("build_dataset: counts must be >= 1");
  }
  const int n_train = round_half_up(split_frac * n_volumes);
  const PhantomSpec base = shepp_logan_spec();
  Dataset ds;
  ds.height = h;
  ds.width = w;
  for (int v = 0; v < n_volumes; ++v) {
    for (int s = 0; s < slices_per_volume; ++s) {
      DatasetRecord rec;
      const std::uint64_t jitter = derive_seed(seed, std::uint64_t(v) + 1, std::uint64_t(s) + 1);
      rec.image = perturbed_phantom(base, jitter, h, w);
      if (with_phase) rec.image = apply_phase_map(rec.image, jitter);
      rec.volume_id = v;
      rec.slice_index = s;
      rec.train = v < n_train;
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

// Manifest: one record per line, "volume_id,slice_index,split,filename".
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (const DatasetRecord& r : ds.records) {
    std::ostringstream name;
    name << "vol" << r.volume_id << "_slice" << r.slice_index << ".cras";
    save_cras(r.image, (fs::path(dir) / name.str()).string());
    manifest << r.volume_id << "," << r.slice_index << "," << (r.train ? "train" : "val") << ","
             << name.str() << "\n";
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open manifest: " + manifest_path.string());
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string vol, slice, split, file;
    if (!std::getline(ss, vol, ',') || !std::getline(ss, slice, ',') ||
        !std::getline(ss, split, ',') || !std::getline(ss, file)) {
      throw std::runtime_error("bad manifest line " + std::to_string(lineno) + " in " +
                               manifest_path.string());
    }
    DatasetRecord rec;
    rec.volume_id = std::stoi(vol);
    rec.slice_index = std::stoi(slice);
    if (split == "train") {
      rec.train = true;
    } else if (split == "val") {
      rec.train = false;
    } else {
      throw std::runtime_error("bad split tag '" + split + "' in " + manifest_path.string());
    }
    rec.image = load_cras((fs::path(dir) / file).string());
    if (ds.records.empty()) {
      ds.height = rec.image.height;
      ds.width = rec.image.width;
    } else if (rec.image.height != ds.height || rec.image.width != ds.width) {
      throw std::runtime_error("mixed raster sizes in dataset " + dir);
    }
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) throw std::runtime_error("empty dataset: " + dir);
  return ds;
}

}  // namespace mcstra
