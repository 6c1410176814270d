#include <gtest/gtest.h>

#include "mcstra/model.hpp"
#include "test_support.hpp"

using namespace mcstra;

namespace {

McstraConfig tiny_config() {
  McstraConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.cascade_length = 2;
  cfg.branch_dim = 8;
  cfg.cascade_dim = 16;
  cfg.tail_dim = 8;
  cfg.heads = 2;
  cfg.patch = 2;
  cfg.window = 4;
  cfg.depths = {2, 2};
  cfg.bottleneck_depth = 2;
  cfg.accel = 3.0;
  cfg.center_frac = 0.1;
  return cfg;
}

struct Instance {
  SamplingMask mask;
  ComplexRaster y_full, y_hat;
};

Instance make_instance(const McstraConfig& cfg, std::uint64_t seed) {
  Instance in{random_line_mask(cfg.width, cfg.accel, cfg.center_frac, seed),
              ComplexRaster(cfg.height, cfg.width), ComplexRaster(cfg.height, cfg.width)};
  Rng rng(derive_seed(seed, 77));
  ComplexRaster img(cfg.height, cfg.width);
  for (cplx& v : img.data) v = cplx(rng.uniform(), 0.3 * rng.uniform());
  in.y_full = fft2c(img);
  in.y_hat = apply_mask(in.y_full, in.mask);
  return in;
}

}  // namespace

TEST(BetaSchedule, PaperDefaults) {
  const std::vector<double> b = beta_schedule(5);
  const double want[5] = {1.0 / 15, 2.0 / 15, 3.0 / 15, 4.0 / 15, 5.0 / 15};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(b[size_t(i)], want[i], 1e-15);
}

TEST(BetaSchedule, SumsToOneAndIncreases) {
  for (int n = 1; n <= 8; ++n) {
    const std::vector<double> b = beta_schedule(n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      sum += b[size_t(i)];
      if (i > 0) EXPECT_GT(b[size_t(i)], b[size_t(i - 1)]);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_EQ(beta_schedule(1)[0], 1.0);
  EXPECT_THROW(beta_schedule(0), std::invalid_argument);
}

TEST(Partition2D, SquareMatchesBandSampleCountClosely) {
  // Configuration E: side chosen as the closest integer to the band's
  // sample count
  const int h = 64, w = 64;
  const double cf = 0.08;
  const KspacePartition band = band_partition(h, w, cf);
  const KspacePartition square = square_partition(h, w, cf);
  int band_n = 0, square_n = 0;
  for (auto v : band.low) band_n += v;
  for (auto v : square.low) square_n += v;
  const int side = round_half_up(std::sqrt(double(band_n)));
  EXPECT_EQ(square_n, side * side);
  EXPECT_LE(std::abs(square_n - band_n), 2 * side);
}

TEST(Partition2D, CompletenessBandAndSquare) {
  Rng rng(3);
  ComplexRaster k(32, 32);
  for (cplx& v : k.data) v = cplx(rng.uniform(), rng.uniform());
  for (bool square : {false, true}) {
    const KspacePartition p =
        square ? square_partition(32, 32, 0.1) : band_partition(32, 32, 0.1);
    ComplexRaster lo = apply_partition(k, p, true);
    ComplexRaster hi = apply_partition(k, p, false);
    for (size_t i = 0; i < k.size(); ++i) EXPECT_EQ(lo.data[i] + hi.data[i], k.data[i]);
  }
}

TEST(PeGenerate, FunctionOfMaskOnly) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 1);
  // nonzero theta_P so the PSF path matters
  Rng rng(2);
  params.pe_w = uniform_fanin<float>({cfg.psf_vec_len(), cfg.pe_dim()}, cfg.psf_vec_len(), rng);
  Instance a = make_instance(cfg, 5), b = make_instance(cfg, 5);
  b.y_hat.data[0] += cplx(0.5, 0.0);  // same mask, different data
  Tape<float> ta, tb;
  auto fa = mcstra_forward(ta, a.y_hat, a.mask, cfg, plans, params);
  auto fb = mcstra_forward(tb, b.y_hat, b.mask, cfg, plans, params);
  EXPECT_EQ(ta.value(fa.e_pos_full), tb.value(fb.e_pos_full));
  // a different mask produces a different embedding
  Instance c = make_instance(cfg, 6);
  Tape<float> tc;
  auto fc = mcstra_forward(tc, c.y_hat, c.mask, cfg, plans, params);
  EXPECT_NE(ta.value(fa.e_pos_full), tc.value(fc.e_pos_full));
}

TEST(PeGenerate, ShapeLawAndDeltaPsf) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 3);
  Rng rng(4);
  params.pe_w = uniform_fanin<float>({cfg.psf_vec_len(), cfg.pe_dim()}, cfg.psf_vec_len(), rng);
  for (float& v : params.pe_b.data) v = 0.25f;
  // all-ones mask: the PSF is a center delta, so every patch vector not
  // containing the center pixel is zero and maps to bias + E_abs
  SamplingMask full(cfg.width, cfg.width);
  std::fill(full.lines.begin(), full.lines.end(), 1);
  Tape<float> t;
  McstraP<Var> v = lift_params<float, McstraP>(t, params, "");
  Var e = pe_generate(t, full, cfg, plans, v);
  EXPECT_EQ(t.shape(e), (Shape{cfg.tokens0(), cfg.pe_dim()}));
  const auto& ev = t.value(e);
  const int center_token =
      (cfg.height / 2 / cfg.patch) * (cfg.width / cfg.patch) + cfg.width / 2 / cfg.patch;
  for (int tok = 0; tok < cfg.tokens0(); ++tok) {
    if (tok == center_token) continue;
    for (int d = 0; d < cfg.pe_dim(); ++d) {
      const float want = 0.25f + params.e_abs.data[size_t(tok) * cfg.pe_dim() + d];
      EXPECT_NEAR(ev[size_t(tok) * cfg.pe_dim() + d], want, 1e-6) << tok;
    }
  }
}

TEST(PeGenerate, ConfigurationDUsesOnlyAbsTable) {
  McstraConfig cfg = tiny_config();
  cfg.ablation = Ablation::D;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 5);
  Instance in = make_instance(cfg, 7);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params);
  EXPECT_EQ(t.value(fwd.e_pos_full),
            std::vector<float>(params.e_abs.data.begin(), params.e_abs.data.end()));
}

TEST(MultiBranch, AdditiveFusion) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 8);
  Instance in = make_instance(cfg, 9);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params);
  ASSERT_TRUE(fwd.x_low && fwd.x_high);
  const auto& lo = t.value(*fwd.x_low);
  const auto& hi = t.value(*fwd.x_high);
  const auto& sum = t.value(fwd.x_branch);
  for (size_t i = 0; i < sum.size(); ++i) EXPECT_EQ(sum[i], lo[i] + hi[i]);
}

TEST(MultiBranch, ConfigurationAIsZeroFilledPassthrough) {
  McstraConfig cfg = tiny_config();
  cfg.ablation = Ablation::A;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 10);
  Instance in = make_instance(cfg, 11);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params);
  EXPECT_FALSE(fwd.x_low);
  const Tensor<float> zf = raster_to_2ch<float>(ifft2c(in.y_hat));
  EXPECT_EQ(t.value(fwd.x_branch), zf.data);
}

TEST(Cascade, LengthOneAndZeroWeightFixedPoint) {
  McstraConfig cfg = tiny_config();
  cfg.cascade_length = 1;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 12);
  // zero the cascade head: DS output is zero, so DC restores exactly
  // the measured lines -> every stage equals the zero-filled image
  std::fill(params.cascade.head_w.data.begin(), params.cascade.head_w.data.end(), 0.0f);
  std::fill(params.cascade.head_b.data.begin(), params.cascade.head_b.data.end(), 0.0f);
  Instance in = make_instance(cfg, 13);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params);
  ASSERT_EQ(fwd.stages.size(), 1u);
  const Tensor<float> zf = raster_to_2ch<float>(ifft2c(in.y_hat));
  EXPECT_LT(max_abs_diff(t.tensor(fwd.stages[0]), zf), 1e-5);
}

TEST(Cascade, ParamCountIndependentOfLength) {
  McstraConfig a = tiny_config(), b = tiny_config();
  a.cascade_length = 1;
  b.cascade_length = 5;
  McstraPlans<float> pa = make_plans<float>(a), pb = make_plans<float>(b);
  auto ma = make_mcstra_params<float>(a, pa, 1);
  auto mb = make_mcstra_params<float>(b, pb, 1);
  EXPECT_EQ(param_count(ma), param_count(mb));
}

TEST(Cascade, HardDcPinAtEveryStage) {
  McstraConfig cfg = tiny_config();
  cfg.cascade_length = 3;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 14);
  Instance in = make_instance(cfg, 15);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params);
  for (const Var& stage : fwd.stages) {
    const ComplexRaster x = raster_from_2ch(t.shape(stage), t.value(stage));
    const ComplexRaster k = fft2c(x);
    double pin = 0.0;
    for (int i = 0; i < k.height; ++i) {
      for (int j = 0; j < k.width; ++j) {
        if (in.mask.lines[j]) pin = std::max(pin, std::abs(k.at(i, j) - in.y_hat.at(i, j)));
      }
    }
    EXPECT_LT(pin, 1e-5);
  }
}

TEST(Cascade, WeightSharingPropagatesMutation) {
  McstraConfig cfg = tiny_config();
  cfg.cascade_length = 3;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 16);
  Instance in = make_instance(cfg, 17);
  Tape<float> t1;
  auto f1 = mcstra_forward(t1, in.y_hat, in.mask, cfg, plans, params);
  params.cascade.embed_w.data[0] += 0.5f;
  Tape<float> t2;
  auto f2 = mcstra_forward(t2, in.y_hat, in.mask, cfg, plans, params);
  for (int s = 0; s < 3; ++s) {
    EXPECT_GT(max_abs_diff(t1.tensor(f1.stages[size_t(s)]), t2.tensor(f2.stages[size_t(s)])),
              0.0)
        << "stage " << s;
  }
}

TEST(Losses, ZeroResidualGivesZeroTotal) {
  // synthetic check of the combination rule: all three components zero
  McstraConfig cfg = tiny_config();
  Tape<float> t;
  Var z = t.input(Tensor<float>::zeros({1}));
  Var total = t.add(t.add(t.scale(z, cfg.gamma_branch), t.scale(z, cfg.gamma_cas)),
                    t.scale(z, cfg.gamma_tail));
  EXPECT_EQ(t.scalar(total), 0.0);
}

TEST(Losses, BranchLossScalesLinearlyWithAlpha) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 18);
  Instance in = make_instance(cfg, 19);
  Tape<float> t1;
  auto f1 = mcstra_forward(t1, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  McstraConfig doubled = cfg;
  doubled.alpha_l *= 2.0;
  doubled.alpha_h *= 2.0;
  Tape<float> t2;
  auto f2 = mcstra_forward(t2, in.y_hat, in.mask, doubled, plans, params, &in.y_full);
  EXPECT_NEAR(t2.scalar(*f2.loss_branch), 2.0 * t1.scalar(*f1.loss_branch), 1e-6);
}

TEST(Losses, TotalIsWeightedCombination) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 20);
  Instance in = make_instance(cfg, 21);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  const double want = cfg.gamma_branch * t.scalar(*fwd.loss_branch) +
                      cfg.gamma_cas * t.scalar(*fwd.loss_cas) +
                      cfg.gamma_tail * t.scalar(*fwd.loss_tail);
  EXPECT_NEAR(t.scalar(*fwd.loss_total), want, 1e-6);
  // paper defaults
  EXPECT_NEAR(cfg.gamma_branch, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(cfg.alpha_l, 0.5, 1e-12);
  EXPECT_NEAR(cfg.alpha_h, 0.5, 1e-12);
}

TEST(Losses, FinalOnlyCascadeMode) {
  McstraConfig cfg = tiny_config();
  cfg.cascade_length = 3;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 22);
  Instance in = make_instance(cfg, 23);
  McstraConfig final_only = cfg;
  final_only.cascade_final_loss_only = true;
  Tape<float> t1, t2;
  auto f1 = mcstra_forward(t1, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  auto f2 = mcstra_forward(t2, in.y_hat, in.mask, final_only, plans, params, &in.y_full);
  // final-only equals the plain l1 of the last stage
  Tape<float> t3;
  Var last = t3.input(t2.tensor(f2.stages.back()));
  Var ref = t3.input(raster_to_2ch<float>(ifft2c(in.y_full)));
  EXPECT_NEAR(t2.scalar(*f2.loss_cas), t3.scalar(t3.l1_loss(last, ref)), 1e-6);
  EXPECT_NE(t1.scalar(*f1.loss_cas), t2.scalar(*f2.loss_cas));
}

TEST(Ablations, TagsParseAndValidate) {
  EXPECT_EQ(parse_ablation("A"), Ablation::A);
  EXPECT_EQ(parse_ablation("F"), Ablation::F);
  EXPECT_THROW(parse_ablation("G"), std::invalid_argument);
  EXPECT_THROW(parse_ablation("ff"), std::invalid_argument);
}

TEST(Ablations, ParameterCounts) {
  McstraConfig f = tiny_config();
  McstraConfig b = tiny_config();
  b.ablation = Ablation::B;
  auto pf = make_plans<float>(f);
  auto pb = make_plans<float>(b);
  auto mf = make_mcstra_params<float>(f, pf, 1);
  auto mb = make_mcstra_params<float>(b, pb, 1);
  EXPECT_EQ(param_count(mf), param_count(mb));  // B keeps the size of F
}

TEST(Ablations, AllSixProduceFiniteLossesAndGradients) {
  for (Ablation a : {Ablation::A, Ablation::B, Ablation::C, Ablation::D, Ablation::E,
                     Ablation::F}) {
    McstraConfig cfg = tiny_config();
    cfg.ablation = a;
    McstraPlans<float> plans = make_plans<float>(cfg);
    auto params = make_mcstra_params<float>(cfg, plans, 30 + int(a));
    Instance in = make_instance(cfg, 40 + int(a));
    Tape<float> t;
    auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
    const double loss = t.scalar(*fwd.loss_total);
    EXPECT_TRUE(std::isfinite(loss)) << ablation_tag(a);
    t.backward(*fwd.loss_total);  // throws on non-finite gradients
    // every lifted parameter produced a finite gradient
    for (const auto& [name, id] : t.params()) {
      EXPECT_TRUE(all_finite(t.grad(Var{id}))) << name;
    }
  }
}

TEST(Ablations, ConfigurationCHasComplexTail) {
  McstraConfig cfg = tiny_config();
  cfg.ablation = Ablation::C;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 50);
  Instance in = make_instance(cfg, 51);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params);
  EXPECT_EQ(t.shape(fwd.tail), (Shape{cfg.height, cfg.width}));
  // tail embed consumes two channels under C
  EXPECT_EQ(params.tail.embed_w.dim(0), 2 * cfg.patch * cfg.patch);
}

TEST(Model, EndToEndParameterGroupsAllReachable) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 52);
  // nonzero theta_P so its gradient path is live
  Rng rng(53);
  params.pe_w = uniform_fanin<float>({cfg.psf_vec_len(), cfg.pe_dim()}, cfg.psf_vec_len(), rng);
  Instance in = make_instance(cfg, 54);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  t.backward(*fwd.loss_total);
  std::map<std::string, double> group_norm;
  for (const auto& [name, id] : t.params()) {
    const std::string group = name.substr(0, name.find('.'));
    for (float g : t.grad(Var{id})) group_norm[group] += std::abs(double(g));
  }
  for (const char* group : {"branch_l", "branch_h", "cascade", "tail", "pe"}) {
    EXPECT_GT(group_norm[group], 0.0) << group;
  }
}

TEST(Model, TrainableLambdaReceivesGradient) {
  McstraConfig cfg = tiny_config();
  cfg.dc_lambda = DcWeight::finite(1.0);
  cfg.dc_lambda_trainable = true;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 55);
  ASSERT_TRUE(params.dc_lambda_raw.has_value());
  Instance in = make_instance(cfg, 56);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  t.backward(*fwd.loss_total);
  double lambda_grad = 0.0;
  for (const auto& [name, id] : t.params()) {
    if (name == "dc.lambda") lambda_grad = std::abs(double(t.grad(Var{id})[0]));
  }
  EXPECT_GT(lambda_grad, 0.0);
}

TEST(Model, PerStagePositionalInjection) {
  McstraConfig cfg = tiny_config();
  cfg.pe_per_stage = true;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 57);
  // adapters exist for every stage dim of every Unet family
  for (int d : {8, 16, 32, 64}) EXPECT_EQ(params.adapters.count(d), 1u) << d;
  Instance in = make_instance(cfg, 58);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  EXPECT_TRUE(std::isfinite(t.scalar(*fwd.loss_total)));
}

TEST(Model, GeometryMismatchRejected) {
  McstraConfig cfg = tiny_config();
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 59);
  Instance in = make_instance(cfg, 60);
  ComplexRaster wrong(cfg.height * 2, cfg.width * 2);
  Tape<float> t;
  EXPECT_THROW(mcstra_forward(t, wrong, in.mask, cfg, plans, params), std::invalid_argument);
}

TEST(Report, PopulatesStageMetrics) {
  McstraConfig cfg = tiny_config();
  cfg.cascade_length = 3;
  McstraPlans<float> plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 61);
  Instance in = make_instance(cfg, 62);
  Tape<float> t;
  auto fwd = mcstra_forward(t, in.y_hat, in.mask, cfg, plans, params, &in.y_full);
  ReconReport r = make_report(t, fwd, ifft2c(in.y_full));
  EXPECT_EQ(r.stage_nmse.size(), 3u);
  EXPECT_TRUE(std::isfinite(r.nmse));
  EXPECT_TRUE(std::isfinite(r.psnr));
  EXPECT_TRUE(std::isfinite(r.ssim));
  EXPECT_GT(r.loss_total, 0.0);
}
