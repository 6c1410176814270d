#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mcstra/grad_check.hpp"
#include "mcstra/model.hpp"

namespace mcstra {

// Finite-difference check against stored (named) parameter tensors.
// make_loss must lift the stored tensors onto the tape it is handed, so
// perturbations made here are picked up by every evaluation. Checks up
// to samples_per_tensor entries of every tensor.
template <typename T, class MakeLoss>
double param_grad_check(const std::vector<std::pair<std::string, Tensor<T>*>>& tensors,
                        MakeLoss&& make_loss, double eps, int samples_per_tensor,
                        std::uint64_t seed) {
  std::map<std::string, std::vector<T>> analytic;
  {
    Tape<T> t;
    Var loss = make_loss(t);
    t.backward(loss);
    for (const auto& [name, id] : t.params()) analytic[name] = t.grad(Var{id});
  }
  auto eval = [&]() {
    Tape<T> t;
    return t.scalar(make_loss(t));
  };
  Rng rng(seed);
  double max_rel = 0.0;
  for (const auto& [name, tensor] : tensors) {
    auto it = analytic.find(name);
    if (it == analytic.end()) throw std::runtime_error("param_grad_check: missing " + name);
    const size_t n = tensor->size();
    std::vector<size_t> picks;
    if (int(n) <= samples_per_tensor) {
      for (size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      for (int k = 0; k < samples_per_tensor; ++k) picks.push_back(size_t(rng.next_below(n)));
    }
    for (size_t i : picks) {
      const T keep = tensor->data[i];
      tensor->data[i] = T(double(keep) + eps);
      const double fp = eval();
      tensor->data[i] = T(double(keep) - eps);
      const double fm = eval();
      tensor->data[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = double(it->second[i]);
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
      max_rel = std::max(max_rel, std::abs(an - fd) / denom);
    }
  }
  return max_rel;
}

template <typename T, class Visitable>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(Visitable& v,
                                                              const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  visit_params(v, prefix, [&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, &t); });
  return out;
}

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;

  bool passed() const { return max_rel_err < threshold; }
};

// Per-op finite-difference suite, each op on three random shapes, f64
// accumulation throughout.
inline std::vector<GradCheckResult> run_op_gradchecks(std::uint64_t seed = 20240901) {
  using T = double;
  std::vector<GradCheckResult> results;
  Rng shape_rng(seed);
  auto randn = [&](Shape s, double scale = 1.0) {
    Tensor<T> t(std::move(s));
    Rng rng(shape_rng.next_u64());
    for (double& v : t.data) v = rng.gaussian() * scale;
    return t;
  };
  auto weighted_sum = [](Tape<T>& t, Var v, const Tensor<T>& w) {
    return t.sum(t.const_mul(v, std::make_shared<const std::vector<T>>(w.data)));
  };
  auto record = [&](const std::string& name, double err, double thr = 1e-3) {
    results.push_back({name, err, thr});
  };

  const int dims[3] = {2, 3, 5};
  for (int trial = 0; trial < 3; ++trial) {
    const int n = dims[trial], k = dims[(trial + 1) % 3], m = dims[(trial + 2) % 3];
    const std::string tag = "#" + std::to_string(trial);
    {
      Tensor<T> a = randn({n, k}), b = randn({k, m});
      record("matmul.lhs" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.matmul(x, t.input(b))));
             }, a, 1e-5));
      record("matmul.rhs" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.matmul(t.input(a), x)));
             }, b, 1e-5));
    }
    {
      Tensor<T> a = randn({2, n, k}), b = randn({2, k, m}), c = randn({2, m, k});
      record("bmm" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.bmm(x, t.input(b))));
             }, a, 1e-5));
      record("bmm_nt" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.bmm_nt(x, t.input(c))));
             }, a, 1e-5));
    }
    {
      Tensor<T> a = randn({n, 4 + m}, 2.0), w = randn({n, 4 + m});
      record("softmax" + tag, grad_check([&](Tape<T>& t, Var x) {
               return weighted_sum(t, t.softmax_lastdim(x), w);
             }, a, 1e-5));
    }
    {
      Tensor<T> a = randn({n, 8}), g = randn({8}, 0.5), b = randn({8}, 0.5), w = randn({n, 8});
      record("layer_norm.x" + tag, grad_check([&](Tape<T>& t, Var x) {
               return weighted_sum(t, t.layer_norm(x, t.input(g), t.input(b), 1e-5), w);
             }, a, 1e-5));
      record("layer_norm.gain" + tag, grad_check([&](Tape<T>& t, Var x) {
               return weighted_sum(t, t.layer_norm(t.input(a), x, t.input(b), 1e-5), w);
             }, g, 1e-5));
    }
    {
      Tensor<T> a = randn({n, m});
      record("gelu" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(x));
             }, a, 1e-5));
      record("scale_add" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.add(t.scale(x, -1.7), x));
             }, a, 1e-5));
      Tensor<T> bias = randn({m});
      record("add_rowvec" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.add_rowvec(t.input(a), x)));
             }, bias, 1e-5));
    }
    {
      Tensor<T> a = randn({n, m}), b = randn({n, m});
      record("l1_loss" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.l1_loss(x, t.input(b));
             }, a, 1e-6));
      Tensor<T> c = randn({n, 2});
      record("concat" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.concat_lastdim(x, t.input(c))));
             }, a, 1e-5));
    }
    {
      Tensor<T> a = randn({2, 4, 4});
      record("magnitude" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.two_channel_magnitude(x));
             }, a, 1e-6));
      Tensor<T> w = randn({2, 4, 4});
      record("fft2c" + tag, grad_check([&](Tape<T>& t, Var x) {
               return weighted_sum(t, t.fft2c_2ch(x), w);
             }, a, 1e-5));
      record("ifft2c" + tag, grad_check([&](Tape<T>& t, Var x) {
               return weighted_sum(t, t.ifft2c_2ch(x), w);
             }, a, 1e-5));
      auto cols = std::make_shared<const std::vector<std::uint8_t>>(
          std::vector<std::uint8_t>{1, 0, 1, 0});
      auto ym = std::make_shared<const std::vector<T>>(randn({2, 4, 4}).data);
      const DcWeight dcw = trial == 0 ? DcWeight::infinite() : DcWeight::finite(0.5 * trial);
      record("dc_blend" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.dc_blend(x, ym, cols, dcw)));
             }, a, 1e-5));
      Tensor<T> lam({1}, {0.4 + 0.3 * trial});
      record("dc_lambda" + tag, grad_check([&](Tape<T>& t, Var x) {
               return t.sum(t.gelu(t.dc_blend_trainable(t.input(a), x, ym, cols)));
             }, lam, 1e-6));
    }
    {
      // permutation gather
      const int total = n * m;
      std::vector<int> perm(size_t(total));
      for (int i = 0; i < total; ++i) perm[size_t(i)] = (3 * i + 1) % total;
      Tensor<T> a = randn({n, m});
      record("gather" + tag, grad_check([&](Tape<T>& t, Var x) {
               Var y = t.gather(x, std::make_shared<const std::vector<int>>(perm), {n, m});
               return t.sum(t.gelu(y));
             }, a, 1e-5));
    }
  }
  {
    // one whole attention block pair
    StagePlan<T> plan(4, 4, 4, 2, 2);
    Rng rng(seed + 99);
    auto b1 = make_swin_block<T>(4, rng);
    auto b2 = make_swin_block<T>(4, rng);
    Tensor<T> x({16, 4});
    Rng xr(seed + 100);
    for (double& v : x.data) v = xr.gaussian();
    auto tensors = named_tensors<T>(b1, "b1");
    auto more = named_tensors<T>(b2, "b2");
    tensors.insert(tensors.end(), more.begin(), more.end());
    const double err = param_grad_check<T>(
        tensors,
        [&](Tape<T>& t) {
          auto v1 = lift_params<T, SwinBlockP>(t, b1, "b1");
          auto v2 = lift_params<T, SwinBlockP>(t, b2, "b2");
          return t.sum(t.gelu(swin_block_pair(t, t.input(x), v1, v2, plan)));
        },
        1e-5, 4, seed + 101);
    results.push_back({"swin_block_pair", err, 1e-3});
  }
  return results;
}

// Gradcheck geometry: the configured model shrunk onto a 16x16 raster
// so a central-difference pass over every parameter tensor stays cheap.
inline McstraConfig gradcheck_config(McstraConfig cfg) {
  cfg.height = 16;
  cfg.width = 16;
  cfg.validate();
  return cfg;
}

// End-to-end check: the total training loss of the toy model against
// central differences, sampled entries from every parameter tensor,
// f64 accumulation.
inline GradCheckResult run_e2e_gradcheck(const McstraConfig& full_cfg, int samples_per_tensor = 2,
                                         std::uint64_t seed = 7) {
  const McstraConfig cfg = gradcheck_config(full_cfg);
  McstraPlans<double> plans = make_plans<double>(cfg);
  McstraP<Tensor<double>> params = make_mcstra_params<double>(cfg, plans, seed);
  // give theta_P live gradients
  Rng rng(derive_seed(seed, 1));
  params.pe_w =
      uniform_fanin<double>({cfg.psf_vec_len(), cfg.pe_dim()}, cfg.psf_vec_len(), rng);

  const SamplingMask mask = random_line_mask(cfg.width, cfg.accel, cfg.center_frac,
                                             derive_seed(seed, 2));
  ComplexRaster img(cfg.height, cfg.width);
  Rng ir(derive_seed(seed, 3));
  for (cplx& v : img.data) v = cplx(ir.uniform(), 0.25 * ir.uniform());
  const ComplexRaster y_full = fft2c(img);
  const ComplexRaster y_hat = apply_mask(y_full, mask);

  auto tensors = named_tensors<double>(params, "");
  const double err = param_grad_check<double>(
      tensors,
      [&](Tape<double>& t) {
        auto fwd = mcstra_forward(t, y_hat, mask, cfg, plans, params, &y_full);
        return *fwd.loss_total;
      },
      1e-5, samples_per_tensor, derive_seed(seed, 4));
  return {"mcstra_end_to_end", err, 1e-2};
}

}  // namespace mcstra
