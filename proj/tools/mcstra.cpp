// Command-line front end: mask/PSF generation, undersampling, training,
// reconstruction, evaluation sweeps, gradient checking, and ablation
// comparisons. Every command is deterministic given its flags and
// seeds; all randomness flows through explicit --seed values.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mcstra/checkpoint.hpp"
#include "mcstra/config.hpp"
#include "mcstra/dataset.hpp"
#include "mcstra/evaluate.hpp"
#include "mcstra/gradcheck_suite.hpp"
#include "mcstra/pgm.hpp"
#include "mcstra/train.hpp"

namespace fs = std::filesystem;
using namespace mcstra;

namespace {

// write-temp-then-rename so partial output never lands on the target
template <class WriteFn>
void atomic_write(const std::string& path, WriteFn&& fn) {
  const std::string tmp = path + ".tmp";
  fn(tmp);
  fs::rename(tmp, path);
}

SamplingMask make_mask_from_flags(const std::string& kind, int width, double accel,
                                  double center_frac, int offset, std::uint64_t seed) {
  if (kind == "random") return random_line_mask(width, accel, center_frac, seed);
  if (kind == "equispaced") {
    return equispaced_line_mask(width, int(std::lround(accel)), center_frac, offset);
  }
  throw CLI::ValidationError("--kind", "must be 'random' or 'equispaced'");
}

std::vector<double> magnitude_pixels(const ComplexRaster& r) {
  std::vector<double> out(r.size());
  for (size_t i = 0; i < r.size(); ++i) out[i] = std::abs(r.data[i]);
  return out;
}

Dataset obtain_dataset(const std::string& dir, int synth_volumes, int synth_slices,
                       const McstraConfig& cfg, std::uint64_t seed, double split_frac) {
  if (synth_volumes > 0) {
    Dataset ds = build_dataset(synth_volumes, synth_slices, cfg.height, cfg.width, split_frac,
                               seed, cfg.phantom_phase);
    save_dataset(ds, dir);
    return ds;
  }
  return load_dataset(dir);
}

std::vector<CheckpointEntry> checkpoint_entries(McstraP<Tensor<float>>& params,
                                                const std::vector<std::vector<float>>* opt_state) {
  std::vector<CheckpointEntry> entries;
  visit_params(params, "", [&](const std::string& n, Tensor<float>& t) {
    entries.push_back({n, t.shape, t.data});
  });
  if (opt_state) {
    size_t k = 0;
    visit_params(params, "", [&](const std::string& n, Tensor<float>& t) {
      if (k < opt_state->size()) entries.push_back({"opt/sq/" + n, t.shape, (*opt_state)[k]});
      ++k;
    });
  }
  return entries;
}

void load_params_checkpoint(McstraP<Tensor<float>>& params, const std::string& path) {
  std::vector<CheckpointEntry> entries;
  for (CheckpointEntry& e : read_checkpoint(path)) {
    if (e.name.rfind("opt/", 0) != 0) entries.push_back(std::move(e));
  }
  restore_tensors<float>(params, "", entries);
}

int run_mask(const std::string& kind, int width, double accel, double center_frac, int offset,
             std::uint64_t seed, const std::string& out) {
  const SamplingMask m = make_mask_from_flags(kind, width, accel, center_frac, offset, seed);
  atomic_write(out, [&](const std::string& p) { save_mask(m, p); });
  std::cout << "mask: " << m.sampled_count() << "/" << m.width << " lines sampled, center band "
            << m.center_count << "\n";
  return 0;
}

int run_psf(const std::string& kind, int width, int height, double accel, double center_frac,
            int offset, std::uint64_t seed, const std::string& mask_in, const std::string& out,
            const std::string& mask_out, const std::string& phantom_out) {
  const SamplingMask m = mask_in.empty()
                             ? make_mask_from_flags(kind, width, accel, center_frac, offset, seed)
                             : load_mask(mask_in);
  const Psf p = psf_of_mask(m, height);
  atomic_write(out, [&](const std::string& path) {
    save_pgm16(magnitude_pixels(p.raster), height, m.width, path);
  });
  if (!mask_out.empty()) {
    atomic_write(mask_out, [&](const std::string& path) { save_mask(m, path); });
  }
  if (!phantom_out.empty()) {
    // third panel: the phantom seen through this sampling pattern
    const ComplexRaster ref = shepp_logan(height, m.width);
    const ComplexRaster zf = ifft2c(apply_mask(fft2c(ref), m));
    atomic_write(phantom_out, [&](const std::string& path) {
      save_pgm16(magnitude_pixels(zf), height, m.width, path, 1.0);
    });
  }
  return 0;
}

int run_undersample(const std::string& in, const std::string& mask_path, double snr_db,
                    std::uint64_t seed, const std::string& out_kspace,
                    const std::string& out_pgm) {
  const ComplexRaster img = load_cras(in);
  const SamplingMask m = load_mask(mask_path);
  ComplexRaster y = apply_mask(fft2c(img), m);
  if (snr_db != kSnrInfinite) y = add_complex_noise(y, snr_db, seed, &m);
  atomic_write(out_kspace, [&](const std::string& p) { save_cras(y, p); });
  if (!out_pgm.empty()) {
    const ComplexRaster zf = ifft2c(y);
    atomic_write(out_pgm, [&](const std::string& p) {
      save_pgm16(magnitude_pixels(zf), zf.height, zf.width, p);
    });
  }
  return 0;
}

int run_train(const std::string& config_path, const std::string& dataset_dir,
              const std::string& out_dir, int epochs, int batch, long steps, std::uint64_t seed,
              int synth_volumes, int synth_slices, double split_frac) {
  const McstraConfig cfg = load_config(config_path);
  const Dataset ds = obtain_dataset(dataset_dir, synth_volumes, synth_slices, cfg, seed,
                                    split_frac);
  TrainResult result = train(cfg, ds, epochs, batch, seed, steps);
  fs::create_directories(out_dir);
  atomic_write((fs::path(out_dir) / "checkpoint.mckp").string(), [&](const std::string& p) {
    write_checkpoint(checkpoint_entries(result.params, &result.opt_state), p);
  });
  atomic_write((fs::path(out_dir) / "trainlog.csv").string(),
               [&](const std::string& p) { result.log.save_csv(p); });
  for (auto it = result.log.rows.rbegin(); it != result.log.rows.rend(); ++it) {
    if (it->split == "val") {
      std::cout << "final val: loss " << it->loss << ", nmse " << it->nmse << ", psnr "
                << it->psnr << ", ssim " << it->ssim << "\n";
      break;
    }
  }
  return 0;
}

int run_reconstruct(const std::string& config_path, const std::string& checkpoint_path,
                    const std::string& in, const std::string& mask_path, const std::string& out,
                    const std::string& ref_path) {
  const McstraConfig cfg = load_config(config_path);
  const ComplexRaster y_hat = load_cras(in);
  const SamplingMask mask = load_mask(mask_path);
  if (y_hat.height != cfg.height || y_hat.width != cfg.width || mask.width != cfg.width) {
    throw std::runtime_error(
        "geometry mismatch: checkpoint was trained for " + std::to_string(cfg.height) + "x" +
        std::to_string(cfg.width) + ", input is " + std::to_string(y_hat.height) + "x" +
        std::to_string(y_hat.width) + " (the model runs at a fixed input size)");
  }
  McstraPlans<float> plans = make_plans<float>(cfg);
  McstraP<Tensor<float>> params = make_mcstra_params<float>(cfg, plans, 0);
  load_params_checkpoint(params, checkpoint_path);
  Tape<float> tape;
  McstraForward<float> fwd = mcstra_forward(tape, y_hat, mask, cfg, plans, params);
  const auto& tail = tape.value(fwd.tail);
  std::vector<double> pixels(tail.begin(), tail.end());
  atomic_write(out, [&](const std::string& p) {
    save_pgm16(pixels, cfg.height, cfg.width, p);
  });
  if (!ref_path.empty()) {
    const ComplexRaster ref = load_cras(ref_path);
    const Tensor<double> ref_mag = magnitude_image<double>(ref);
    const Tensor<double> pred({cfg.height, cfg.width}, std::move(pixels));
    std::cout << "nmse " << nmse(pred, ref_mag) << ", psnr " << psnr(pred, ref_mag) << ", ssim "
              << ssim(pred, ref_mag) << "\n";
  }
  return 0;
}

int run_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& dataset_dir, const std::string& protocol, std::uint64_t seed,
             const std::string& out, int synth_volumes, int synth_slices, double split_frac) {
  const McstraConfig cfg = load_config(config_path);
  const Dataset ds = obtain_dataset(dataset_dir, synth_volumes, synth_slices, cfg, seed,
                                    split_frac);
  McstraPlans<float> plans = make_plans<float>(cfg);
  McstraP<Tensor<float>> params = make_mcstra_params<float>(cfg, plans, 0);
  load_params_checkpoint(params, checkpoint_path);
  const std::vector<EvalRow> rows = evaluate(cfg, params, ds, protocol, seed);
  atomic_write(out, [&](const std::string& p) { save_eval_csv(rows, p); });
  atomic_write(out + ".summary.csv",
               [&](const std::string& p) { save_eval_summary(rows, p); });
  std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
  return 0;
}

int run_gradcheck(const std::string& config_path, int samples) {
  const McstraConfig cfg = config_path.empty() ? McstraConfig{} : load_config(config_path);
  std::vector<GradCheckResult> results = run_op_gradchecks();
  // collapse per-shape trials to one line per op
  std::map<std::string, GradCheckResult> by_op;
  for (const GradCheckResult& r : results) {
    const std::string op = r.name.substr(0, r.name.find('#'));
    auto& slot = by_op[op];
    slot.name = op;
    slot.threshold = r.threshold;
    slot.max_rel_err = std::max(slot.max_rel_err, r.max_rel_err);
  }
  bool ok = true;
  for (const auto& [op, r] : by_op) {
    std::cout << (r.passed() ? "pass" : "FAIL") << "  " << op << "  max rel err " << r.max_rel_err
              << "  (threshold " << r.threshold << ")\n";
    ok = ok && r.passed();
  }
  const GradCheckResult e2e = run_e2e_gradcheck(cfg, samples);
  std::cout << (e2e.passed() ? "pass" : "FAIL") << "  " << e2e.name << "  max rel err "
            << e2e.max_rel_err << "  (threshold " << e2e.threshold << ")\n";
  ok = ok && e2e.passed();
  if (!ok) throw std::runtime_error("gradient check failed");
  return 0;
}

int run_ablate(const std::string& config_path, const std::string& tags,
               const std::string& dataset_dir, const std::string& out, long steps, int batch,
               std::uint64_t seed, int synth_volumes, int synth_slices, double split_frac) {
  const McstraConfig base_cfg = load_config(config_path);
  const Dataset ds = obtain_dataset(dataset_dir, synth_volumes, synth_slices, base_cfg, seed,
                                    split_frac);
  std::ostringstream csv;
  csv << "config,metric,value\n" << std::setprecision(10);
  std::stringstream taglist(tags);
  std::string tag;
  int count = 0;
  while (std::getline(taglist, tag, ',')) {
    McstraConfig cfg = base_cfg;
    cfg.ablation = parse_ablation(detail::trim(tag));
    const int epochs = int((steps * batch) / std::max<size_t>(1, ds.split_indices(true).size())) + 1;
    TrainResult r = train(cfg, ds, epochs, batch, seed, steps);
    double first_loss = 0, last_loss = 0;
    const TrainLogRow* last_val = nullptr;
    for (const TrainLogRow& row : r.log.rows) {
      if (row.split == "train") {
        if (row.step == 0) first_loss = row.loss;
        last_loss = row.loss;
      } else if (row.split == "val") {
        last_val = &row;
      }
    }
    csv << tag << ",first_loss," << first_loss << "\n";
    csv << tag << ",final_loss," << last_loss << "\n";
    if (last_val) {
      csv << tag << ",nmse," << last_val->nmse << "\n";
      csv << tag << ",psnr," << last_val->psnr << "\n";
      csv << tag << ",ssim," << last_val->ssim << "\n";
    }
    std::cout << "configuration " << tag << ": loss " << first_loss << " -> " << last_loss
              << "\n";
    ++count;
  }
  if (count == 0) throw CLI::ValidationError("--tags", "no configurations given");
  atomic_write(out, [&](const std::string& p) {
    std::ofstream os(p);
    os << csv.str();
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"McSTRA toolkit: masks, PSFs, undersampling, training, reconstruction"};
  app.require_subcommand(1);

  // mask
  auto* mask_cmd = app.add_subcommand("mask", "generate a sampling mask file");
  std::string kind = "random", out;
  int width = 320, height = 320, offset = 0;
  double accel = 4.0, center_frac = 0.08;
  std::uint64_t seed = 0;
  mask_cmd->add_option("--width", width)->check(CLI::Range(4, 1 << 20));
  mask_cmd->add_option("--accel", accel)->check(CLI::Range(1.0, 1e6));
  mask_cmd->add_option("--center-frac", center_frac)
      ->check(CLI::Range(std::numeric_limits<double>::min(), 1.0));
  mask_cmd->add_option("--kind", kind)->check(CLI::IsMember({"random", "equispaced"}));
  mask_cmd->add_option("--offset", offset)->check(CLI::NonNegativeNumber);
  mask_cmd->add_option("--seed", seed);
  mask_cmd->add_option("--out", out)->required();

  // psf
  auto* psf_cmd = app.add_subcommand("psf", "write the PSF magnitude image of a mask");
  std::string psf_mask_in, psf_out, psf_mask_out, psf_phantom_out;
  psf_cmd->add_option("--width", width)->check(CLI::Range(4, 1 << 20));
  psf_cmd->add_option("--height", height)->check(CLI::Range(4, 1 << 20));
  psf_cmd->add_option("--accel", accel)->check(CLI::Range(1.0, 1e6));
  psf_cmd->add_option("--center-frac", center_frac)
      ->check(CLI::Range(std::numeric_limits<double>::min(), 1.0));
  psf_cmd->add_option("--kind", kind)->check(CLI::IsMember({"random", "equispaced"}));
  psf_cmd->add_option("--offset", offset)->check(CLI::NonNegativeNumber);
  psf_cmd->add_option("--seed", seed);
  psf_cmd->add_option("--mask", psf_mask_in, "read the mask from a file instead of generating");
  psf_cmd->add_option("--out", psf_out)->required();
  psf_cmd->add_option("--mask-out", psf_mask_out, "also write the mask text file");
  psf_cmd->add_option("--phantom-out", psf_phantom_out,
                      "also write the aliased head phantom seen through this mask");

  // undersample
  auto* und_cmd = app.add_subcommand("undersample", "mask (and optionally add noise to) k-space");
  std::string und_in, und_mask, und_out, und_pgm;
  std::string snr_str = "inf";
  und_cmd->add_option("--in", und_in)->required();
  und_cmd->add_option("--mask", und_mask)->required();
  und_cmd->add_option("--snr-db", snr_str, "SNR in dB, or 'inf' for no noise");
  und_cmd->add_option("--seed", seed);
  und_cmd->add_option("--out", und_out)->required();
  und_cmd->add_option("--zf-pgm", und_pgm, "also write the zero-filled magnitude image");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset directory");
  std::string cfg_path, dataset_dir, out_dir = "out";
  int epochs = 50, batch = 8, synth_volumes = 0, synth_slices = 4;
  long steps = -1;
  double split_frac = 0.8;
  train_cmd->add_option("--config", cfg_path)->required();
  train_cmd->add_option("--dataset-dir", dataset_dir)->required();
  train_cmd->add_option("--out-dir", out_dir);
  train_cmd->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch", batch)->check(CLI::PositiveNumber);
  train_cmd->add_option("--steps", steps, "stop after exactly this many optimizer steps");
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--synth-volumes", synth_volumes,
                        "synthesize a phantom dataset of this many volumes first");
  train_cmd->add_option("--synth-slices", synth_slices);
  train_cmd->add_option("--split-frac", split_frac)->check(CLI::Range(0.0, 1.0));

  // reconstruct
  auto* rec_cmd = app.add_subcommand("reconstruct", "reconstruct one undersampled k-space file");
  std::string rec_ckpt, rec_in, rec_mask, rec_out, rec_ref;
  rec_cmd->add_option("--config", cfg_path)->required();
  rec_cmd->add_option("--checkpoint", rec_ckpt)->required();
  rec_cmd->add_option("--in", rec_in)->required();
  rec_cmd->add_option("--mask", rec_mask)->required();
  rec_cmd->add_option("--out", rec_out)->required();
  rec_cmd->add_option("--ref", rec_ref, "fully sampled reference for a metric summary line");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run an evaluation protocol, write CSV");
  std::string eval_ckpt, protocol = "base", eval_out;
  eval_cmd->add_option("--config", cfg_path)->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--dataset-dir", dataset_dir)->required();
  eval_cmd->add_option("--protocol", protocol)
      ->check(CLI::IsMember({"base", "accel", "masktype", "snr"}));
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--out", eval_out)->required();
  eval_cmd->add_option("--synth-volumes", synth_volumes);
  eval_cmd->add_option("--synth-slices", synth_slices);
  eval_cmd->add_option("--split-frac", split_frac)->check(CLI::Range(0.0, 1.0));

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  int samples = 2;
  grad_cmd->add_option("--config", cfg_path);
  grad_cmd->add_option("--samples", samples, "entries checked per parameter tensor")
      ->check(CLI::PositiveNumber);

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "train configurations A-F and compare");
  std::string tags = "A,B,C,D,E,F", abl_out;
  abl_cmd->add_option("--config", cfg_path)->required();
  abl_cmd->add_option("--tags", tags, "comma-separated configuration letters");
  abl_cmd->add_option("--dataset-dir", dataset_dir)->required();
  abl_cmd->add_option("--out", abl_out)->required();
  abl_cmd->add_option("--steps", steps)->check(CLI::PositiveNumber);
  abl_cmd->add_option("--batch", batch)->check(CLI::PositiveNumber);
  abl_cmd->add_option("--seed", seed);
  abl_cmd->add_option("--synth-volumes", synth_volumes);
  abl_cmd->add_option("--synth-slices", synth_slices);
  abl_cmd->add_option("--split-frac", split_frac)->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (mask_cmd->parsed()) return run_mask(kind, width, accel, center_frac, offset, seed, out);
    if (psf_cmd->parsed()) {
      return run_psf(kind, width, height, accel, center_frac, offset, seed, psf_mask_in, psf_out,
                     psf_mask_out, psf_phantom_out);
    }
    if (und_cmd->parsed()) {
      const double snr = (snr_str == "inf" || snr_str == "infinite") ? kSnrInfinite
                                                                     : std::stod(snr_str);
      return run_undersample(und_in, und_mask, snr, seed, und_out, und_pgm);
    }
    if (train_cmd->parsed()) {
      return run_train(cfg_path, dataset_dir, out_dir, epochs, batch, steps, seed, synth_volumes,
                       synth_slices, split_frac);
    }
    if (rec_cmd->parsed()) {
      return run_reconstruct(cfg_path, rec_ckpt, rec_in, rec_mask, rec_out, rec_ref);
    }
    if (eval_cmd->parsed()) {
      return run_eval(cfg_path, eval_ckpt, dataset_dir, protocol, seed, eval_out, synth_volumes,
                      synth_slices, split_frac);
    }
    if (grad_cmd->parsed()) return run_gradcheck(cfg_path, samples);
    if (abl_cmd->parsed()) {
      if (steps < 0) steps = 50;
      return run_ablate(cfg_path, tags, dataset_dir, abl_out, steps, batch, seed, synth_volumes,
                        synth_slices, split_frac);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
