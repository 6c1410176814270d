#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mcstra/dataset.hpp"
#include "mcstra/model.hpp"
#include "mcstra/optimizer.hpp"
#include "mcstra/threading.hpp"

namespace mcstra {

struct TrainLogRow {
  long step = 0;
  int epoch = 0;
  std::string split;  // train | val | val_stage
  double loss = std::numeric_limits<double>::quiet_NaN();
  double nmse = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
  int stage = -1;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  void save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "step,epoch,split,loss,nmse,psnr,ssim,stage\n";
    os << std::setprecision(10);
    for (const TrainLogRow& r : rows) {
      os << r.step << "," << r.epoch << "," << r.split << "," << r.loss << "," << r.nmse << ","
         << r.psnr << "," << r.ssim << "," << r.stage << "\n";
    }
  }
};

// Per-volume mask selection. Random masks are redrawn per epoch unless
// fixed_masks is set; validation masks never change; equispaced masks
// are inherently fixed.
inline SamplingMask mask_for_volume(const McstraConfig& cfg, std::uint64_t seed, int volume,
                                    int epoch, bool validation) {
  if (cfg.mask_kind == MaskKind::equispaced) {
    return equispaced_line_mask(cfg.width, int(std::lround(cfg.accel)), cfg.center_frac, 0);
  }
  std::uint64_t s;
  if (validation) {
    s = derive_seed(seed, 0x7a1u, std::uint64_t(volume));
  } else if (cfg.fixed_masks) {
    s = derive_seed(seed, 0xf17edu, std::uint64_t(volume));
  } else {
    s = derive_seed(seed, 0xe90c000u + std::uint64_t(epoch), std::uint64_t(volume));
  }
  return random_line_mask(cfg.width, cfg.accel, cfg.center_frac, s);
}

using StepHook = std::function<void(long step, const Tape<float>& tape,
                                    const McstraForward<float>& fwd, const ComplexRaster& y_hat,
                                    const SamplingMask& mask)>;

struct TrainResult {
  McstraP<Tensor<float>> params;
  TrainLog log;
  std::vector<std::vector<float>> opt_state;  // RMSProp accumulators, parameter order
};

namespace detail {

struct SampleGrads {
  double loss = 0.0;
  std::vector<std::vector<float>> grads;
};

}  // namespace detail

// Epoch loop: per-volume masks, forward/backward per batch member,
// ordered gradient mean, RMSProp update. Deterministic given (seed,
// config, dataset) regardless of worker count. max_steps >= 0 stops
// after exactly that many optimizer steps.
inline TrainResult train(const McstraConfig& cfg, const Dataset& ds, int epochs, int batch,
                         std::uint64_t seed, long max_steps = -1, StepHook hook = nullptr,
                         const McstraP<Tensor<float>>* initial = nullptr) {
  if (ds.records.empty()) throw std::invalid_argument("train: empty dataset");
  if (ds.height != cfg.height || ds.width != cfg.width) {
    throw std::invalid_argument("train: dataset geometry does not match config");
  }
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  McstraPlans<float> plans = make_plans<float>(cfg);
  TrainResult result{initial ? *initial : make_mcstra_params<float>(cfg, plans, seed), {}, {}};
  auto& params = result.params;

  std::vector<std::pair<std::string, Tensor<float>*>> named;
  visit_params(params, "", [&](const std::string& n, Tensor<float>& t) {
    named.emplace_back(n, &t);
  });
  Rmsprop opt(cfg.lr, cfg.rmsprop_rho, cfg.rmsprop_eps, cfg.clip_norm);

  const std::vector<size_t> train_idx = ds.split_indices(true);
  const std::vector<size_t> val_idx = ds.split_indices(false);
  if (train_idx.empty()) throw std::invalid_argument("train: no training records");

  auto run_sample = [&](size_t rec_idx, int epoch, bool validation, const StepHook& h, long step,
                        detail::SampleGrads* out, ReconReport* report) {
    const DatasetRecord& rec = ds.records[rec_idx];
    const SamplingMask mask = mask_for_volume(cfg, seed, rec.volume_id, epoch, validation);
    const ComplexRaster y_full = fft2c(rec.image);
    const ComplexRaster y_hat = apply_mask(y_full, mask);
    Tape<float> tape;
    McstraForward<float> fwd = mcstra_forward(tape, y_hat, mask, cfg, plans, params, &y_full);
    if (!validation) {
      tape.backward(*fwd.loss_total);
      out->loss = tape.scalar(*fwd.loss_total);
      out->grads.clear();
      out->grads.reserve(tape.params().size());
      for (const auto& [name, id] : tape.params()) out->grads.push_back(tape.grad(Var{id}));
    }
    if (report) *report = make_report(tape, fwd, ifft2c(y_full));
    if (h) h(step, tape, fwd, y_hat, mask);
  };

  long step = 0;
  bool done = false;
  for (int epoch = 0; epoch < epochs && !done; ++epoch) {
    // deterministic shuffle
    std::vector<size_t> order = train_idx;
    Rng shuffle_rng(derive_seed(seed, 0x5f1eu, std::uint64_t(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[size_t(shuffle_rng.next_below(i))]);
    }

    for (size_t start = 0; start < order.size() && !done; start += size_t(batch)) {
      const size_t members = std::min(size_t(batch), order.size() - start);
      std::vector<detail::SampleGrads> per(members);
      const int workers = hook ? 1 : worker_count();
      try {
        parallel_for(int(members),
                     [&](int i) {
                       run_sample(order[start + size_t(i)], epoch, false,
                                  i == 0 ? hook : StepHook{}, step, &per[size_t(i)], nullptr);
                     },
                     workers);
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " +
                                 e.what());
      }
      // ordered mean over the batch
      std::vector<std::vector<float>> grads(named.size());
      double loss = 0.0;
      for (size_t k = 0; k < named.size(); ++k) {
        std::vector<double> acc(named[k].second->size(), 0.0);
        for (size_t m = 0; m < members; ++m) {
          const auto& g = per[m].grads[k];
          for (size_t i = 0; i < g.size(); ++i) acc[i] += double(g[i]);
        }
        grads[k].resize(acc.size());
        for (size_t i = 0; i < acc.size(); ++i) grads[k][i] = float(acc[i] / double(members));
      }
      for (size_t m = 0; m < members; ++m) loss += per[m].loss;
      loss /= double(members);

      opt.step(named, grads);
      if (params.dc_lambda_raw) {
        float& lam = params.dc_lambda_raw->data[0];
        lam = std::max(0.0f, lam);
      }
      result.log.rows.push_back({step, epoch, "train", loss,
                                 std::numeric_limits<double>::quiet_NaN(),
                                 std::numeric_limits<double>::quiet_NaN(),
                                 std::numeric_limits<double>::quiet_NaN(), -1});
      ++step;
      if (max_steps >= 0 && step >= max_steps) done = true;
    }

    // validation pass
    if (!val_idx.empty()) {
      std::vector<ReconReport> reports(val_idx.size());
      parallel_for(int(val_idx.size()), [&](int i) {
        run_sample(val_idx[size_t(i)], epoch, true, nullptr, step, nullptr,
                   &reports[size_t(i)]);
      });
      double loss = 0, vnmse = 0, vpsnr = 0, vssim = 0;
      std::vector<double> stage_nmse(size_t(cfg.cascade_length), 0.0);
      for (const ReconReport& r : reports) {
        loss += r.loss_total;
        vnmse += r.nmse;
        vpsnr += r.psnr;
        vssim += r.ssim;
        for (size_t t = 0; t < stage_nmse.size(); ++t) stage_nmse[t] += r.stage_nmse[t];
      }
      const double n = double(reports.size());
      result.log.rows.push_back({step, epoch, "val", loss / n, vnmse / n, vpsnr / n, vssim / n,
                                 -1});
      for (size_t t = 0; t < stage_nmse.size(); ++t) {
        result.log.rows.push_back({step, epoch, "val_stage",
                                   std::numeric_limits<double>::quiet_NaN(), stage_nmse[t] / n,
                                   std::numeric_limits<double>::quiet_NaN(),
                                   std::numeric_limits<double>::quiet_NaN(), int(t) + 1});
      }
    }
  }
  result.opt_state = opt.state();
  return result;
}

}  // namespace mcstra
