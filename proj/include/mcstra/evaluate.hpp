#pragma once

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcstra/model.hpp"
#include "mcstra/threading.hpp"
#include "mcstra/train.hpp"

namespace mcstra {

struct EvalRow {
  int volume = 0, slice = 0;
  std::string protocol;  // e.g. "snr/mcstra", "snr/zero_filled"
  std::string param;     // protocol point, e.g. "20", "random", "inf"
  double nmse = 0.0, psnr = 0.0, ssim = 0.0;
};

namespace detail {

struct EvalPoint {
  std::string param;
  double accel;
  MaskKind kind;
  double snr_db;
};

inline std::vector<EvalPoint> protocol_points(const McstraConfig& cfg,
                                              const std::string& protocol) {
  std::vector<EvalPoint> pts;
  if (protocol == "base") {
    pts.push_back({"-", cfg.accel, cfg.mask_kind, kSnrInfinite});
  } else if (protocol == "accel") {
    for (int a : {4, 6, 8, 10, 12}) {
      pts.push_back({std::to_string(a), double(a), cfg.mask_kind, kSnrInfinite});
    }
  } else if (protocol == "masktype") {
    pts.push_back({"random", cfg.accel, MaskKind::random, kSnrInfinite});
    pts.push_back({"equispaced", cfg.accel, MaskKind::equispaced, kSnrInfinite});
  } else if (protocol == "snr") {
    pts.push_back({"inf", cfg.accel, cfg.mask_kind, kSnrInfinite});
    for (int s : {50, 20, 15, 10, 5, 0}) {
      pts.push_back({std::to_string(s), cfg.accel, cfg.mask_kind, double(s)});
    }
  } else {
    throw std::invalid_argument("unknown protocol: " + protocol +
                                " (want base|accel|masktype|snr)");
  }
  return pts;
}

}  // namespace detail

// Runs the validation split through every protocol point, for both the
// model and the parameter-free zero-filled baseline. Masks depend only
// on (seed, volume, point geometry), so the infinite-SNR sweep point
// reproduces the clean evaluation bit-exactly.
inline std::vector<EvalRow> evaluate(const McstraConfig& cfg, McstraP<Tensor<float>>& params,
                                     const Dataset& ds, const std::string& protocol,
                                     std::uint64_t seed) {
  const std::vector<detail::EvalPoint> pts = detail::protocol_points(cfg, protocol);
  const std::vector<size_t> idx = ds.split_indices(false);
  if (idx.empty()) throw std::invalid_argument("evaluate: validation split is empty");
  McstraPlans<float> plans = make_plans<float>(cfg);

  struct Slot {
    EvalRow model, zf;
  };
  std::vector<Slot> slots(idx.size() * pts.size());
  parallel_for(int(slots.size()), [&](int si) {
    const size_t rec_i = size_t(si) / pts.size();
    const size_t pt_i = size_t(si) % pts.size();
    const DatasetRecord& rec = ds.records[idx[rec_i]];
    const detail::EvalPoint& pt = pts[pt_i];

    SamplingMask mask =
        pt.kind == MaskKind::equispaced
            ? equispaced_line_mask(cfg.width, int(std::lround(pt.accel)), cfg.center_frac, 0)
            : random_line_mask(cfg.width, pt.accel, cfg.center_frac,
                               derive_seed(seed, 0x7a1u, std::uint64_t(rec.volume_id)));
    const ComplexRaster y_full = fft2c(rec.image);
    ComplexRaster y_hat = apply_mask(y_full, mask);
    if (pt.snr_db != kSnrInfinite) {
      y_hat = add_complex_noise(y_hat, pt.snr_db,
                                derive_seed(seed, 0x5272u + std::uint64_t(pt_i),
                                            std::uint64_t(idx[rec_i])),
                                &mask);
    }
    const Tensor<double> ref = magnitude_image<double>(ifft2c(y_full));
    const Tensor<double> zf_mag = magnitude_image<double>(ifft2c(y_hat));

    Slot s;
    s.zf = {rec.volume_id, rec.slice_index, protocol + "/zero_filled", pt.param,
            nmse(zf_mag, ref), psnr(zf_mag, ref), ssim(zf_mag, ref)};
    Tape<float> tape;
    McstraForward<float> fwd = mcstra_forward(tape, y_hat, mask, cfg, plans, params);
    const Tensor<double> out = tape.tensor(fwd.tail).cast<double>();
    s.model = {rec.volume_id, rec.slice_index, protocol + "/mcstra", pt.param,
               nmse(out, ref), psnr(out, ref), ssim(out, ref)};
    slots[size_t(si)] = std::move(s);
  });

  std::vector<EvalRow> rows;
  rows.reserve(slots.size() * 2);
  for (const Slot& s : slots) rows.push_back(s.model);
  for (const Slot& s : slots) rows.push_back(s.zf);
  return rows;
}

inline void save_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "volume,slice,protocol,param,nmse,psnr,ssim\n";
  os << std::setprecision(10);
  for (const EvalRow& r : rows) {
    os << r.volume << "," << r.slice << "," << r.protocol << "," << r.param << "," << r.nmse
       << "," << r.psnr << "," << r.ssim << "\n";
  }
}

// Slice-level and volume-level mean with standard error, per
// (protocol, param, metric).
inline void save_eval_summary(const std::vector<EvalRow>& rows, const std::string& path) {
  struct Key {
    std::string protocol, param;
    bool operator<(const Key& o) const {
      return protocol != o.protocol ? protocol < o.protocol : param < o.param;
    }
  };
  std::map<Key, std::vector<const EvalRow*>> groups;
  for (const EvalRow& r : rows) groups[{r.protocol, r.param}].push_back(&r);

  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "protocol,param,metric,slice_mean,slice_stderr,volume_mean,volume_stderr\n";
  os << std::setprecision(10);
  auto mean_stderr = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    if (v.size() < 2) return std::make_pair(m, 0.0);
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= double(v.size() - 1);
    return std::make_pair(m, std::sqrt(s2 / double(v.size())));
  };
  for (const auto& [key, members] : groups) {
    for (int metric = 0; metric < 3; ++metric) {
      const char* name = metric == 0 ? "nmse" : metric == 1 ? "psnr" : "ssim";
      auto value = [metric](const EvalRow* r) {
        return metric == 0 ? r->nmse : metric == 1 ? r->psnr : r->ssim;
      };
      std::vector<double> slice_vals;
      std::map<int, std::vector<double>> by_volume;
      for (const EvalRow* r : members) {
        slice_vals.push_back(value(r));
        by_volume[r->volume].push_back(value(r));
      }
      std::vector<double> volume_means;
      for (const auto& [vol, vals] : by_volume) {
        double m = 0.0;
        for (double x : vals) m += x;
        volume_means.push_back(m / double(vals.size()));
      }
      const auto [sm, se] = mean_stderr(slice_vals);
      const auto [vm, ve] = mean_stderr(volume_means);
      os << key.protocol << "," << key.param << "," << name << "," << sm << "," << se << ","
         << vm << "," << ve << "\n";
    }
  }
}

}  // namespace mcstra
