#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mcstra/metrics.hpp"
#include "mcstra/noise.hpp"
#include "mcstra/psf.hpp"
#include "mcstra/swin.hpp"

namespace mcstra {

// ---- complex <-> two-channel tensor ----------------------------------

template <typename T>
Tensor<T> raster_to_2ch(const ComplexRaster& r) {
  Tensor<T> t({2, r.height, r.width});
  const size_t hw = r.size();
  for (size_t i = 0; i < hw; ++i) {
    t.data[i] = T(r.data[i].real());
    t.data[hw + i] = T(r.data[i].imag());
  }
  return t;
}

template <typename T>
ComplexRaster raster_from_2ch(const Shape& shape, const std::vector<T>& v) {
  if (shape.size() != 3 || shape[0] != 2) throw std::invalid_argument("want [2,h,w]");
  ComplexRaster r(shape[1], shape[2]);
  const size_t hw = r.size();
  for (size_t i = 0; i < hw; ++i) r.data[i] = cplx(double(v[i]), double(v[hw + i]));
  return r;
}

template <typename T>
Tensor<T> magnitude_image(const ComplexRaster& r) {
  Tensor<T> t({r.height, r.width});
  for (size_t i = 0; i < r.size(); ++i) t.data[i] = T(std::abs(r.data[i]));
  return t;
}

// ---- configuration ----------------------------------------------------

// Fig.-14-style configurations: A no multi-branch, B unpartitioned
// branches, C complex-valued tail, D no PSF embedding, E square
// low-frequency partition, F the full model.
enum class Ablation { A, B, C, D, E, F };

inline char ablation_tag(Ablation a) { return char('A' + int(a)); }

inline Ablation parse_ablation(const std::string& s) {
  if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'F') return Ablation(s[0] - 'A');
  throw std::invalid_argument("unknown ablation configuration: " + s);
}

enum class PsfFeed { magnitude, real, complex_pair };

enum class MaskKind { random, equispaced };

struct McstraConfig {
  int height = 64, width = 64;
  int cascade_length = 5;  // N
  int branch_dim = 48, cascade_dim = 96, tail_dim = 48;
  DcWeight dc_lambda = DcWeight::infinite();
  bool dc_lambda_trainable = false;
  double alpha_l = 0.5, alpha_h = 0.5;
  double gamma_branch = 1.0 / 3.0, gamma_cas = 1.0 / 3.0, gamma_tail = 1.0 / 3.0;
  double accel = 4.0;
  double center_frac = 0.08;
  MaskKind mask_kind = MaskKind::random;
  int patch = 2, window = 4, heads = 3;
  std::vector<int> depths = {2, 2};
  int bottleneck_depth = 2;
  Ablation ablation = Ablation::F;
  bool pe_per_stage = false;
  PsfFeed psf_feed = PsfFeed::magnitude;
  bool cascade_final_loss_only = false;
  // optimizer / data knobs
  double lr = 1e-4;
  double rmsprop_rho = 0.99;
  double rmsprop_eps = 1e-8;
  double clip_norm = 1.0;
  bool fixed_masks = false;
  bool phantom_phase = false;

  int tokens0() const { return (height / patch) * (width / patch); }
  int pe_dim() const { return std::max({branch_dim, cascade_dim, tail_dim}); }
  int head_dim() const { return branch_dim / heads; }
  int psf_vec_len() const {
    return (psf_feed == PsfFeed::complex_pair ? 2 : 1) * patch * patch;
  }

  void validate() const {
    if (!is_power_of_two(height) || !is_power_of_two(width)) {
      throw std::invalid_argument("config: height/width must be powers of two");
    }
    if (cascade_length < 1) throw std::invalid_argument("config: cascade_length must be >= 1");
    if (gamma_branch < 0 || gamma_cas < 0 || gamma_tail < 0) {
      throw std::invalid_argument("config: gamma weights must be nonnegative");
    }
    if (heads < 1 || branch_dim % heads != 0) {
      throw std::invalid_argument("config: branch_dim must be divisible by heads");
    }
    const int hd = head_dim();
    for (int d : {branch_dim, cascade_dim, tail_dim}) {
      if (d % hd != 0) throw std::invalid_argument("config: all dims must share the head size");
    }
    if (accel < 1.0) throw std::invalid_argument("config: accel must be >= 1");
    if (center_frac <= 0.0 || center_frac > 1.0) {
      throw std::invalid_argument("config: center_frac must be in (0,1]");
    }
    if (depths.empty()) throw std::invalid_argument("config: depths must not be empty");
    for (int d : depths) {
      if (d < 2 || d % 2 != 0) throw std::invalid_argument("config: stage depths must be even");
    }
    if (bottleneck_depth < 2 || bottleneck_depth % 2 != 0) {
      throw std::invalid_argument("config: bottleneck depth must be even");
    }
  }
};

// ---- k-space partition -------------------------------------------------

// Multiplicative 0/1 split of k-space into complementary low/high
// regions. Band mode broadcasts the 1D center band; square mode
// (Configuration E) uses a centered square of equal sample count.
struct KspacePartition {
  int height = 0, width = 0;
  std::vector<std::uint8_t> low;  // 1 = low-frequency region

  bool in_low(int i, int j) const { return low[size_t(i) * width + j] != 0; }
};

inline KspacePartition band_partition(int height, int width, double center_frac) {
  auto [low_mask, high_mask] = partition_band_masks(width, center_frac);
  (void)high_mask;
  KspacePartition p{height, width, std::vector<std::uint8_t>(size_t(height) * width, 0)};
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) p.low[size_t(i) * width + j] = low_mask.lines[j];
  }
  return p;
}

inline KspacePartition square_partition(int height, int width, double center_frac) {
  // same sample count as the band: (2 * center lines) * height
  const int band = 2 * round_half_up(center_frac * width);
  int side = round_half_up(std::sqrt(double(band) * height));
  side = std::min({side, height, width});
  KspacePartition p{height, width, std::vector<std::uint8_t>(size_t(height) * width, 0)};
  const int r0 = height / 2 - side / 2, c0 = width / 2 - side / 2;
  for (int i = r0; i < r0 + side; ++i) {
    for (int j = c0; j < c0 + side; ++j) p.low[size_t(i) * width + j] = 1;
  }
  return p;
}

inline KspacePartition make_partition(const McstraConfig& cfg) {
  return cfg.ablation == Ablation::E ? square_partition(cfg.height, cfg.width, cfg.center_frac)
                                     : band_partition(cfg.height, cfg.width, cfg.center_frac);
}

inline ComplexRaster apply_partition(const ComplexRaster& k, const KspacePartition& p, bool low) {
  if (k.height != p.height || k.width != p.width) {
    throw std::invalid_argument("apply_partition: shape mismatch");
  }
  ComplexRaster out = k;
  for (size_t i = 0; i < out.size(); ++i) {
    const bool keep = (p.low[i] != 0) == low;
    if (!keep) out.data[i] = cplx(0.0, 0.0);
  }
  return out;
}

// ---- parameters --------------------------------------------------------

// All trainable state. Exactly one cascade Unet exists regardless of
// the cascade length (weights are shared across iterations).
template <class S>
struct McstraP {
  SwinUnetP<S> branch_low, branch_high;
  SwinUnetP<S> cascade;
  SwinUnetP<S> tail;
  S pe_w, pe_b;                              // PSF patch vectors -> pe_dim
  S e_abs;                                   // [tokens0, pe_dim]
  std::map<int, std::pair<S, S>> adapters;   // unet dim -> (W, b) slice of E_pos
  std::optional<S> dc_lambda_raw;            // scalar, when lambda is trainable
};

template <class S, class F>
void visit_params(McstraP<S>& m, const std::string& p, F&& f) {
  visit_params(m.branch_low, p + "branch_l", f);
  visit_params(m.branch_high, p + "branch_h", f);
  visit_params(m.cascade, p + "cascade", f);
  visit_params(m.tail, p + "tail", f);
  f(p + "pe.w", m.pe_w);
  f(p + "pe.b", m.pe_b);
  f(p + "pe.e_abs", m.e_abs);
  for (auto& [dim, wb] : m.adapters) {
    f(p + "pe.adapter" + std::to_string(dim) + ".w", wb.first);
    f(p + "pe.adapter" + std::to_string(dim) + ".b", wb.second);
  }
  if (m.dc_lambda_raw) f(p + "dc.lambda", *m.dc_lambda_raw);
}

template <class B, class A>
McstraP<B> clone_structure(const McstraP<A>& s) {
  McstraP<B> o;
  o.branch_low = clone_structure<B>(s.branch_low);
  o.branch_high = clone_structure<B>(s.branch_high);
  o.cascade = clone_structure<B>(s.cascade);
  o.tail = clone_structure<B>(s.tail);
  for (auto& [dim, wb] : s.adapters) o.adapters[dim];  // default-construct pair
  if (s.dc_lambda_raw) o.dc_lambda_raw.emplace();
  return o;
}

// Precomputed geometry shared by every forward pass of one model.
template <typename T>
struct McstraPlans {
  SwinUnetPlan<T> branch, cascade, tail;
  IndexTable psf_patches;                       // PSF raster -> patch vectors
  std::vector<std::vector<IndexTable>> pools;   // per level: 4 quadrant gathers at pe_dim
  std::shared_ptr<const std::vector<std::uint8_t>> sampled_cols;  // set per forward
};

template <typename T>
McstraPlans<T> make_plans(const McstraConfig& cfg) {
  cfg.validate();
  McstraPlans<T> p;
  const int levels = int(cfg.depths.size());
  const int heads_b = cfg.branch_dim / cfg.head_dim();
  const int heads_c = cfg.cascade_dim / cfg.head_dim();
  const int heads_t = cfg.tail_dim / cfg.head_dim();
  p.branch = SwinUnetPlan<T>(2, 2, cfg.height, cfg.width, cfg.patch, cfg.branch_dim, heads_b,
                             cfg.window, levels);
  p.cascade = SwinUnetPlan<T>(2, 2, cfg.height, cfg.width, cfg.patch, cfg.cascade_dim, heads_c,
                              cfg.window, levels);
  const int tail_ch = cfg.ablation == Ablation::C ? 2 : 1;
  p.tail = SwinUnetPlan<T>(tail_ch, tail_ch, cfg.height, cfg.width, cfg.patch, cfg.tail_dim,
                           heads_t, cfg.window, levels);
  const int pch = cfg.psf_feed == PsfFeed::complex_pair ? 2 : 1;
  p.psf_patches = winidx::patchify(pch, cfg.height, cfg.width, cfg.patch);
  if (cfg.pe_per_stage) {
    int rows = cfg.height / cfg.patch, cols = cfg.width / cfg.patch;
    for (int l = 0; l < levels; ++l) {
      std::vector<IndexTable> quads;
      for (int q = 0; q < 4; ++q) quads.push_back(winidx::pool_quadrant(rows, cols, cfg.pe_dim(), q));
      p.pools.push_back(std::move(quads));
      rows /= 2;
      cols /= 2;
    }
  }
  return p;
}

// The set of embedding dims that consume E_pos.
inline std::set<int> adapter_dims(const McstraConfig& cfg) {
  std::set<int> dims = {cfg.branch_dim, cfg.cascade_dim, cfg.tail_dim};
  if (cfg.pe_per_stage) {
    for (int base : {cfg.branch_dim, cfg.cascade_dim, cfg.tail_dim}) {
      int d = base;
      for (size_t l = 0; l <= cfg.depths.size(); ++l) {
        dims.insert(d);
        d *= 2;
      }
    }
  }
  return dims;
}

// theta_P starts at zero so the full model and Configuration D have
// identical initial positional embeddings.
template <typename T>
McstraP<Tensor<T>> make_mcstra_params(const McstraConfig& cfg, const McstraPlans<T>& plans,
                                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x701u));
  McstraP<Tensor<T>> m;
  m.branch_low = make_swin_unet<T>(plans.branch, cfg.depths, cfg.bottleneck_depth, rng);
  m.branch_high = make_swin_unet<T>(plans.branch, cfg.depths, cfg.bottleneck_depth, rng);
  m.cascade = make_swin_unet<T>(plans.cascade, cfg.depths, cfg.bottleneck_depth, rng);
  m.tail = make_swin_unet<T>(plans.tail, cfg.depths, cfg.bottleneck_depth, rng);
  m.pe_w = Tensor<T>::zeros({cfg.psf_vec_len(), cfg.pe_dim()});
  m.pe_b = Tensor<T>::zeros({cfg.pe_dim()});
  m.e_abs = Tensor<T>::uniform({cfg.tokens0(), cfg.pe_dim()}, rng, -0.02, 0.02);
  for (int d : adapter_dims(cfg)) {
    m.adapters[d] = {uniform_fanin<T>({cfg.pe_dim(), d}, cfg.pe_dim(), rng),
                     Tensor<T>::zeros({d})};
  }
  if (cfg.dc_lambda_trainable) {
    m.dc_lambda_raw = Tensor<T>({1}, {T(cfg.dc_lambda.is_infinite ? 1.0 : cfg.dc_lambda.lambda)});
  }
  return m;
}

template <typename T>
size_t param_count(McstraP<Tensor<T>>& m) {
  size_t n = 0;
  visit_params(m, "", [&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

// ---- loss schedule ------------------------------------------------------

// beta_t = t / sum(1..N): linearly increasing, sums to one.
inline std::vector<double> beta_schedule(int n) {
  if (n < 1) throw std::invalid_argument("beta_schedule: N must be >= 1");
  std::vector<double> beta(static_cast<size_t>(n));
  const double denom = double(n) * (n + 1) / 2.0;
  for (int t = 1; t <= n; ++t) beta[size_t(t - 1)] = double(t) / denom;
  return beta;
}

// ---- forward ------------------------------------------------------------

template <typename T>
struct McstraForward {
  Var e_pos_full;                // [tokens0, pe_dim]
  std::optional<Var> x_low, x_high;  // branch outputs [2,h,w]
  Var x_branch;                  // cascade input [2,h,w]
  std::vector<Var> stages;       // x_t for t = 1..N, [2,h,w]
  Var tail;                      // magnitude image [h,w]
  std::optional<Var> loss_branch, loss_cas, loss_tail, loss_total;
};

namespace detail {

template <typename T>
std::shared_ptr<const std::vector<T>> shared_data(const Tensor<T>& t) {
  return std::make_shared<const std::vector<T>>(t.data);
}

}  // namespace detail

// E_pos = P(H_samp) + E_abs, a function of the mask alone, shared by
// every Swin-Unet of the model for this input (Configuration D keeps
// only E_abs).
template <typename T>
Var pe_generate(Tape<T>& t, const SamplingMask& m, const McstraConfig& cfg,
                const McstraPlans<T>& plans, const McstraP<Var>& v) {
  if (cfg.ablation == Ablation::D) return v.e_abs;
  if (m.width != cfg.width) throw std::invalid_argument("pe_generate: mask width mismatch");
  const Psf psf = psf_of_mask(m, cfg.height);
  const int pch = cfg.psf_feed == PsfFeed::complex_pair ? 2 : 1;
  Tensor<T> field({pch, cfg.height, cfg.width});
  const size_t hw = psf.raster.size();
  for (size_t i = 0; i < hw; ++i) {
    switch (cfg.psf_feed) {
      case PsfFeed::magnitude: field.data[i] = T(std::abs(psf.raster.data[i])); break;
      case PsfFeed::real: field.data[i] = T(psf.raster.data[i].real()); break;
      case PsfFeed::complex_pair:
        field.data[i] = T(psf.raster.data[i].real());
        field.data[hw + i] = T(psf.raster.data[i].imag());
        break;
    }
  }
  Var patches = t.gather(t.input(std::move(field)), plans.psf_patches,
                         {cfg.tokens0(), cfg.psf_vec_len()});
  return t.add(affine(t, patches, v.pe_w, v.pe_b), v.e_abs);
}

namespace detail {

// Adapted (and, per stage, pooled) positional tokens for one Unet.
template <typename T>
LevelPos adapt_positions(Tape<T>& t, Var e_pos_full, int unet_dim, const McstraConfig& cfg,
                         const McstraPlans<T>& plans, const McstraP<Var>& v) {
  LevelPos pos;
  auto adapter = [&](int dim) -> const std::pair<Var, Var>& {
    auto it = v.adapters.find(dim);
    if (it == v.adapters.end()) {
      throw std::logic_error("missing positional adapter for dim " + std::to_string(dim));
    }
    return it->second;
  };
  {
    const auto& [w, b] = adapter(unet_dim);
    pos.push_back(affine(t, e_pos_full, w, b));
  }
  if (cfg.pe_per_stage) {
    Var level = e_pos_full;
    int rows = cfg.height / cfg.patch, cols = cfg.width / cfg.patch;
    int d = unet_dim;
    for (size_t l = 0; l < cfg.depths.size(); ++l) {
      const Shape pooled{rows / 2 * (cols / 2), cfg.pe_dim()};
      Var q0 = t.gather(level, plans.pools[l][0], pooled);
      Var q1 = t.gather(level, plans.pools[l][1], pooled);
      Var q2 = t.gather(level, plans.pools[l][2], pooled);
      Var q3 = t.gather(level, plans.pools[l][3], pooled);
      level = t.scale(t.add(t.add(q0, q1), t.add(q2, q3)), 0.25);
      d *= 2;
      const auto& [w, b] = adapter(d);
      pos.push_back(affine(t, level, w, b));
      rows /= 2;
      cols /= 2;
    }
  }
  return pos;
}

}  // namespace detail

// Full pipeline on one tape: branches, weight-shared DC cascade, tail.
// y_hat must already be masked; y_full (when given) enables the loss
// terms.
template <typename T>
McstraForward<T> mcstra_forward(Tape<T>& t, const ComplexRaster& y_hat, const SamplingMask& m,
                                const McstraConfig& cfg, const McstraPlans<T>& plans,
                                McstraP<Tensor<T>>& stored,
                                const ComplexRaster* y_full = nullptr) {
  if (y_hat.height != cfg.height || y_hat.width != cfg.width) {
    throw std::invalid_argument("mcstra_forward: raster does not match configured geometry");
  }
  McstraP<Var> v = lift_params<T, McstraP>(t, stored, "");
  McstraForward<T> out;

  // positional embedding, shared across all Unets for this mask
  out.e_pos_full = pe_generate(t, m, cfg, plans, v);
  auto pos_branch = detail::adapt_positions(t, out.e_pos_full, cfg.branch_dim, cfg, plans, v);
  auto pos_cascade = detail::adapt_positions(t, out.e_pos_full, cfg.cascade_dim, cfg, plans, v);
  auto pos_tail = detail::adapt_positions(t, out.e_pos_full, cfg.tail_dim, cfg, plans, v);

  const KspacePartition part = make_partition(cfg);

  // multi-branch extractor
  if (cfg.ablation == Ablation::A) {
    out.x_branch = t.input(raster_to_2ch<T>(ifft2c(y_hat)));
  } else {
    const bool unpartitioned = cfg.ablation == Ablation::B;
    ComplexRaster in_low = unpartitioned ? y_hat : apply_partition(y_hat, part, true);
    ComplexRaster in_high = unpartitioned ? y_hat : apply_partition(y_hat, part, false);
    Var zf_low = t.input(raster_to_2ch<T>(ifft2c(in_low)));
    Var zf_high = t.input(raster_to_2ch<T>(ifft2c(in_high)));
    out.x_low = swin_unet_forward(t, zf_low, v.branch_low, plans.branch, pos_branch);
    out.x_high = swin_unet_forward(t, zf_high, v.branch_high, plans.branch, pos_branch);
    out.x_branch = t.add(*out.x_low, *out.x_high);
  }

  // weight-shared cascade interleaved with data consistency
  auto y_meas = detail::shared_data(raster_to_2ch<T>(y_hat));
  auto cols = std::make_shared<const std::vector<std::uint8_t>>(m.lines);
  Var x = out.x_branch;
  for (int it = 0; it < cfg.cascade_length; ++it) {
    Var u = swin_unet_forward(t, x, v.cascade, plans.cascade, pos_cascade);
    Var k = t.fft2c_2ch(u);
    Var kc = cfg.dc_lambda_trainable
                 ? t.dc_blend_trainable(k, *v.dc_lambda_raw, y_meas, cols)
                 : t.dc_blend(k, y_meas, cols, cfg.dc_lambda);
    x = t.ifft2c_2ch(kc);
    out.stages.push_back(x);
  }

  // reconstruction tail
  if (cfg.ablation == Ablation::C) {
    Var xc = swin_unet_forward(t, x, v.tail, plans.tail, pos_tail);
    out.tail = t.two_channel_magnitude(xc);
  } else {
    Var mag = t.reshape(t.two_channel_magnitude(x), {1, cfg.height, cfg.width});
    Var xt = swin_unet_forward(t, mag, v.tail, plans.tail, pos_tail);
    out.tail = t.reshape(xt, {cfg.height, cfg.width});
  }

  if (y_full) {
    const ComplexRaster ref = ifft2c(*y_full);
    Var ref_2ch = t.input(raster_to_2ch<T>(ref));

    // branch loss (Eq.-15 shape): alpha-weighted l1 against the
    // partition references; Configuration B compares to the full image
    if (cfg.ablation == Ablation::A) {
      out.loss_branch = t.input(Tensor<T>::zeros({1}));
    } else if (cfg.ablation == Ablation::B) {
      Var ll = t.l1_loss(*out.x_low, ref_2ch);
      Var lh = t.l1_loss(*out.x_high, ref_2ch);
      out.loss_branch = t.add(t.scale(ll, cfg.alpha_l), t.scale(lh, cfg.alpha_h));
    } else {
      Var ref_low = t.input(raster_to_2ch<T>(ifft2c(apply_partition(*y_full, part, true))));
      Var ref_high = t.input(raster_to_2ch<T>(ifft2c(apply_partition(*y_full, part, false))));
      Var ll = t.l1_loss(*out.x_low, ref_low);
      Var lh = t.l1_loss(*out.x_high, ref_high);
      out.loss_branch = t.add(t.scale(ll, cfg.alpha_l), t.scale(lh, cfg.alpha_h));
    }

    // discounted cascade loss
    const std::vector<double> beta = beta_schedule(cfg.cascade_length);
    std::optional<Var> lc;
    for (int it = 0; it < cfg.cascade_length; ++it) {
      if (cfg.cascade_final_loss_only && it + 1 != cfg.cascade_length) continue;
      const double b = cfg.cascade_final_loss_only ? 1.0 : beta[size_t(it)];
      Var term = t.scale(t.l1_loss(out.stages[size_t(it)], ref_2ch), b);
      lc = lc ? t.add(*lc, term) : term;
    }
    out.loss_cas = *lc;

    Var ref_mag = t.input(magnitude_image<T>(ref));
    out.loss_tail = t.l1_loss(out.tail, ref_mag);

    out.loss_total = t.add(t.add(t.scale(*out.loss_branch, cfg.gamma_branch),
                                 t.scale(*out.loss_cas, cfg.gamma_cas)),
                           t.scale(*out.loss_tail, cfg.gamma_tail));
  }
  return out;
}

// ---- reporting ----------------------------------------------------------

struct ReconReport {
  double nmse = 0.0, psnr = 0.0, ssim = 0.0;
  std::vector<double> stage_nmse;  // t = 1..N
  double loss_branch = 0.0, loss_cas = 0.0, loss_tail = 0.0, loss_total = 0.0;
};

template <typename T>
ReconReport make_report(const Tape<T>& t, const McstraForward<T>& fwd,
                        const ComplexRaster& reference) {
  ReconReport r;
  const Tensor<double> ref_mag = magnitude_image<double>(reference);
  Tensor<double> tail = t.tensor(fwd.tail).template cast<double>();
  r.nmse = nmse(tail, ref_mag);
  r.psnr = psnr(tail, ref_mag);
  r.ssim = ssim(tail, ref_mag);
  for (const Var& xv : fwd.stages) {
    const ComplexRaster xr = raster_from_2ch(t.shape(xv), t.value(xv));
    r.stage_nmse.push_back(nmse(magnitude_image<double>(xr), ref_mag));
  }
  if (fwd.loss_total) {
    r.loss_branch = t.scalar(*fwd.loss_branch);
    r.loss_cas = t.scalar(*fwd.loss_cas);
    r.loss_tail = t.scalar(*fwd.loss_tail);
    r.loss_total = t.scalar(*fwd.loss_total);
  }
  return r;
}

}  // namespace mcstra
