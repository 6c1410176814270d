#include <gtest/gtest.h>

#include "mcstra/grad_check.hpp"
#include "mcstra/tape.hpp"

using namespace mcstra;

namespace {

Tensor<double> randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  Rng rng(seed);
  for (double& v : t.data) v = rng.gaussian() * scale;
  return t;
}

}  // namespace

TEST(TapeOps, MatmulIdentityAndZeros) {
  Tape<double> t;
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.data[size_t(i) * 3 + i] = 1.0;
  Tensor<double> b = randn({3, 4}, 1);
  Var vb = t.input(b);
  Var out = t.matmul(t.input(eye), vb);
  EXPECT_EQ(max_abs_diff(t.tensor(out), b), 0.0);

  Var z = t.matmul(vb, t.input(Tensor<double>::zeros({4, 2})));
  for (double v : t.value(z)) EXPECT_EQ(v, 0.0);
}

TEST(TapeOps, MatmulGradientMatchesClosedForm) {
  // d/dA sum(A B) = ones * B^T
  Tensor<double> a = randn({3, 4}, 2);
  Tensor<double> b = randn({4, 5}, 3);
  Tape<double> t;
  Var va = t.param("a", a);
  Var loss = t.sum(t.matmul(va, t.input(b)));
  t.backward(loss);
  const auto& g = t.grad(va);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 4; ++k) {
      double want = 0.0;
      for (int j = 0; j < 5; ++j) want += b.data[size_t(k) * 5 + j];
      EXPECT_NEAR(g[size_t(i) * 4 + k], want, 1e-12);
    }
  }
  // and against the finite-difference oracle
  const double err = grad_check(
      [&](Tape<double>& tp, Var x) { return tp.sum(tp.matmul(x, tp.input(b))); }, a, 1e-4);
  EXPECT_LT(err, 1e-3);
}

TEST(TapeOps, SoftmaxRows) {
  Tape<double> t;
  Tensor<double> x({2, 2}, {5.0, 5.0, 0.0, std::log(3.0)});
  Var s = t.softmax_lastdim(t.input(x));
  const auto& v = t.value(s);
  EXPECT_NEAR(v[0], 0.5, 1e-12);
  EXPECT_NEAR(v[1], 0.5, 1e-12);
  EXPECT_NEAR(v[2], 0.25, 1e-12);
  EXPECT_NEAR(v[3], 0.75, 1e-12);
}

TEST(TapeOps, SoftmaxRowsSumToOne) {
  Tensor<double> x = randn({7, 9}, 4, 3.0);
  Tape<double> t;
  const auto& v = t.value(t.softmax_lastdim(t.input(x)));
  for (int r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) {
      s += v[size_t(r) * 9 + c];
      EXPECT_GE(v[size_t(r) * 9 + c], 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(TapeOps, SoftmaxGradient) {
  Tensor<double> x = randn({3, 5}, 5);
  Tensor<double> w = randn({3, 5}, 6);
  const double err = grad_check(
      [&](Tape<double>& tp, Var v) {
        // weighted sum to make the Jacobian-vector product nontrivial
        Var s = tp.softmax_lastdim(v);
        return tp.sum(tp.const_mul(s, std::make_shared<const std::vector<double>>(w.data)));
      },
      x, 1e-5);
  EXPECT_LT(err, 1e-3);
}

TEST(TapeOps, LayerNormConstantRowIsZero) {
  Tape<double> t;
  Var x = t.input(Tensor<double>::full({2, 8}, 3.5));
  Var g = t.input(Tensor<double>::full({8}, 1.0));
  Var b = t.input(Tensor<double>::zeros({8}));
  const auto& v = t.value(t.layer_norm(x, g, b, 1e-5));
  for (double e : v) EXPECT_NEAR(e, 0.0, 1e-9);
}

TEST(TapeOps, LayerNormZeroGainGivesBias) {
  Tape<double> t;
  Var x = t.input(randn({4, 6}, 7));
  Var g = t.input(Tensor<double>::zeros({6}));
  Tensor<double> bias = randn({6}, 8);
  const auto& v = t.value(t.layer_norm(x, g, t.input(bias), 1e-5));
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 6; ++c) EXPECT_NEAR(v[size_t(r) * 6 + c], bias.data[size_t(c)], 1e-12);
  }
}

TEST(TapeOps, LayerNormRowsAreStandardized) {
  Tensor<double> x = randn({5, 16}, 9, 2.0);
  Tape<double> t;
  Var g = t.input(Tensor<double>::full({16}, 1.0));
  Var b = t.input(Tensor<double>::zeros({16}));
  const auto& v = t.value(t.layer_norm(t.input(x), g, b, 1e-5));
  for (int r = 0; r < 5; ++r) {
    double mean = 0.0;
    for (int c = 0; c < 16; ++c) mean += v[size_t(r) * 16 + c];
    EXPECT_LT(std::abs(mean / 16.0), 1e-5);
  }
}

TEST(TapeOps, LayerNormGradient) {
  Tensor<double> x = randn({4, 8}, 10);
  Tensor<double> gain = randn({8}, 11, 0.5);
  Tensor<double> bias = randn({8}, 12, 0.5);
  Tensor<double> w = randn({4, 8}, 13);
  auto weighted = [&](Tape<double>& tp, Var xs, Var gs, Var bs) {
    Var y = tp.layer_norm(xs, gs, bs, 1e-5);
    return tp.sum(tp.const_mul(y, std::make_shared<const std::vector<double>>(w.data)));
  };
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var v) {
              return weighted(tp, v, tp.input(gain), tp.input(bias));
            }, x, 1e-5),
            1e-3);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var v) {
              return weighted(tp, tp.input(x), v, tp.input(bias));
            }, gain, 1e-5),
            1e-3);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var v) {
              return weighted(tp, tp.input(x), tp.input(gain), v);
            }, bias, 1e-5),
            1e-3);
}

TEST(TapeOps, GeluValuesAndGradient) {
  Tape<double> t;
  const auto& v = t.value(t.gelu(t.input(Tensor<double>({3}, {0.0, 100.0, -100.0}))));
  EXPECT_EQ(v[0], 0.0);
  EXPECT_NEAR(v[1], 100.0, 1e-9);
  EXPECT_NEAR(v[2], 0.0, 1e-9);
  Tensor<double> x = randn({4, 4}, 14);
  EXPECT_LT(grad_check([](Tape<double>& tp, Var a) { return tp.sum(tp.gelu(a)); }, x, 1e-5),
            1e-3);
}

TEST(TapeOps, L1Loss) {
  Tensor<double> x = randn({3, 3}, 15);
  Tape<double> t;
  Var vx = t.input(x);
  EXPECT_EQ(t.scalar(t.l1_loss(vx, vx)), 0.0);
  // off ties the subgradient is exact
  Tensor<double> y = randn({3, 3}, 16);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var a) { return tp.l1_loss(a, tp.input(y)); }, x,
                       1e-6),
            1e-3);
}

TEST(TapeOps, TwoChannelMagnitude) {
  Tape<double> t;
  Tensor<double> f({2, 2, 2});
  for (size_t i = 0; i < 4; ++i) f.data[i] = 3.0;
  for (size_t i = 4; i < 8; ++i) f.data[i] = 4.0;
  const auto& v = t.value(t.two_channel_magnitude(t.input(f)));
  for (double m : v) EXPECT_NEAR(m, 5.0, 1e-9);

  Tensor<double> x = randn({2, 4, 4}, 17);
  EXPECT_LT(grad_check(
                [](Tape<double>& tp, Var a) { return tp.sum(tp.two_channel_magnitude(a)); }, x,
                1e-6),
            1e-3);
}

TEST(TapeOps, GatherScatterRoundTrip) {
  // a permutation gather followed by its inverse is the identity, and
  // the backward pass is the exact adjoint
  const int n = 24;
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = (7 * i + 3) % n;
  auto idx = std::make_shared<const std::vector<int>>(perm);
  std::vector<int> inv(n);
  for (int i = 0; i < n; ++i) inv[size_t(perm[size_t(i)])] = i;
  auto idx_inv = std::make_shared<const std::vector<int>>(inv);

  Tensor<double> x = randn({4, 6}, 18);
  Tape<double> t;
  Var vx = t.input(x);
  Var g = t.gather(vx, idx, {4, 6});
  Var back = t.gather(g, idx_inv, {4, 6});
  EXPECT_EQ(max_abs_diff(t.tensor(back), x), 0.0);

  EXPECT_LT(grad_check(
                [&](Tape<double>& tp, Var a) {
                  Var y = tp.gather(a, idx, {4, 6});
                  return tp.sum(tp.gelu(y));
                },
                x, 1e-5),
            1e-3);
}

TEST(TapeOps, BatchedMatmulAgainstLoops) {
  Tensor<double> a = randn({3, 2, 4}, 19);
  Tensor<double> b = randn({3, 4, 5}, 20);
  Tape<double> t;
  const auto& v = t.value(t.bmm(t.input(a), t.input(b)));
  for (int bb = 0; bb < 3; ++bb) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 5; ++j) {
        double want = 0.0;
        for (int k = 0; k < 4; ++k) {
          want += a.data[size_t(bb) * 8 + size_t(i) * 4 + k] *
                  b.data[size_t(bb) * 20 + size_t(k) * 5 + j];
        }
        EXPECT_NEAR(v[size_t(bb) * 10 + size_t(i) * 5 + j], want, 1e-12);
      }
    }
  }
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var x) {
              return tp.sum(tp.gelu(tp.bmm(x, tp.input(b))));
            }, a, 1e-5),
            1e-3);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var x) {
              return tp.sum(tp.gelu(tp.bmm(tp.input(a), x)));
            }, b, 1e-5),
            1e-3);
}

TEST(TapeOps, BmmNtMatchesExplicitTranspose) {
  Tensor<double> a = randn({2, 3, 4}, 21);
  Tensor<double> b = randn({2, 5, 4}, 22);
  Tensor<double> bt({2, 4, 5});
  for (int bb = 0; bb < 2; ++bb) {
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 4; ++j) {
        bt.data[size_t(bb) * 20 + size_t(j) * 5 + i] = b.data[size_t(bb) * 20 + size_t(i) * 4 + j];
      }
    }
  }
  Tape<double> t;
  auto vnt = t.value(t.bmm_nt(t.input(a), t.input(b)));
  auto vt = t.value(t.bmm(t.input(a), t.input(bt)));
  for (size_t i = 0; i < vnt.size(); ++i) EXPECT_NEAR(vnt[i], vt[i], 1e-12);

  EXPECT_LT(grad_check([&](Tape<double>& tp, Var x) {
              return tp.sum(tp.gelu(tp.bmm_nt(x, tp.input(b))));
            }, a, 1e-5),
            1e-3);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var x) {
              return tp.sum(tp.gelu(tp.bmm_nt(tp.input(a), x)));
            }, b, 1e-5),
            1e-3);
}

TEST(TapeOps, ConcatGradientSplits) {
  Tensor<double> a = randn({3, 2}, 23);
  Tensor<double> b = randn({3, 4}, 24);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var x) {
              return tp.sum(tp.gelu(tp.concat_lastdim(x, tp.input(b))));
            }, a, 1e-5),
            1e-3);
  EXPECT_LT(grad_check([&](Tape<double>& tp, Var x) {
              return tp.sum(tp.gelu(tp.concat_lastdim(tp.input(a), x)));
            }, b, 1e-5),
            1e-3);
}

TEST(TapeOps, FourierRoundTripAndAdjoint) {
  Tensor<double> x = randn({2, 8, 8}, 25);
  Tape<double> t;
  Var vx = t.input(x);
  Var rt = t.ifft2c_2ch(t.fft2c_2ch(vx));
  EXPECT_LT(max_abs_diff(t.tensor(rt), x), 1e-9);

  Tensor<double> w = randn({2, 8, 8}, 26);
  EXPECT_LT(grad_check(
                [&](Tape<double>& tp, Var a) {
                  Var k = tp.fft2c_2ch(a);
                  return tp.sum(tp.const_mul(k, std::make_shared<const std::vector<double>>(w.data)));
                },
                x, 1e-5),
            1e-3);
  EXPECT_LT(grad_check(
                [&](Tape<double>& tp, Var a) {
                  Var k = tp.ifft2c_2ch(a);
                  return tp.sum(tp.const_mul(k, std::make_shared<const std::vector<double>>(w.data)));
                },
                x, 1e-5),
            1e-3);
}

TEST(TapeOps, DcBlendGradient) {
  const int h = 4, w = 4;
  Tensor<double> x = randn({2, h, w}, 27);
  auto y = std::make_shared<const std::vector<double>>(randn({2, h, w}, 28).data);
  auto cols = std::make_shared<const std::vector<std::uint8_t>>(
      std::vector<std::uint8_t>{1, 0, 1, 1});
  for (DcWeight dcw : {DcWeight::infinite(), DcWeight::finite(1.0), DcWeight::finite(0.0)}) {
    EXPECT_LT(grad_check(
                  [&](Tape<double>& tp, Var a) {
                    return tp.sum(tp.gelu(tp.dc_blend(a, y, cols, dcw)));
                  },
                  x, 1e-5),
              1e-3);
  }
}

TEST(TapeOps, DcBlendTrainableLambdaGradient) {
  const int h = 4, w = 4;
  Tensor<double> x = randn({2, h, w}, 29);
  Tensor<double> lam({1}, {0.8});
  auto y = std::make_shared<const std::vector<double>>(randn({2, h, w}, 30).data);
  auto cols = std::make_shared<const std::vector<std::uint8_t>>(
      std::vector<std::uint8_t>{1, 1, 0, 1});
  EXPECT_LT(grad_check(
                [&](Tape<double>& tp, Var l) {
                  Var out = tp.dc_blend_trainable(tp.input(x), l, y, cols);
                  return tp.sum(tp.gelu(out));
                },
                lam, 1e-6),
            1e-3);
  EXPECT_LT(grad_check(
                [&](Tape<double>& tp, Var a) {
                  Var out = tp.dc_blend_trainable(a, tp.input(lam), y, cols);
                  return tp.sum(tp.gelu(out));
                },
                x, 1e-5),
            1e-3);
}

TEST(TapeBackward, SumGradIsOnes) {
  Tape<double> t;
  Var p = t.param("p", randn({3, 3}, 31));
  t.backward(t.sum(p));
  for (double g : t.grad(p)) EXPECT_EQ(g, 1.0);
}

TEST(TapeBackward, DisconnectedParamGetsZeros) {
  Tape<double> t;
  Var p = t.param("p", randn({2, 2}, 32));
  Var q = t.param("q", randn({2, 2}, 33));
  t.backward(t.sum(t.gelu(p)));
  for (double g : t.grad(q)) EXPECT_EQ(g, 0.0);
}

TEST(TapeBackward, SecondCallRejected) {
  Tape<double> t;
  Var p = t.param("p", randn({2}, 34));
  Var loss = t.sum(p);
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), std::logic_error);
}

TEST(TapeBackward, NonScalarLossRejected) {
  Tape<double> t;
  Var p = t.param("p", randn({2, 2}, 35));
  EXPECT_THROW(t.backward(t.gelu(p)), std::invalid_argument);
}

TEST(TapeBackward, NonFiniteOutputRejected) {
  Tape<double> t;
  Var p = t.input(Tensor<double>({2}, {1e308, 1e308}));
  EXPECT_THROW(t.add(p, p), std::runtime_error);
}

TEST(GradCheck, LinearIsExact) {
  Tensor<double> x = randn({5}, 36);
  EXPECT_LT(grad_check([](Tape<double>& tp, Var a) { return tp.scale(tp.sum(a), 2.5); }, x,
                       1e-4),
            1e-6);
}

TEST(GradCheck, SoftmaxMatmulComposite) {
  Tensor<double> x = randn({4, 6}, 37);
  Tensor<double> w = randn({6, 3}, 38);
  EXPECT_LT(grad_check(
                [&](Tape<double>& tp, Var a) {
                  return tp.mean(tp.softmax_lastdim(tp.matmul(a, tp.input(w))));
                },
                x, 1e-5),
            1e-3);
}

TEST(Tape, ReplayIsBitIdentical) {
  Tensor<double> x = randn({6, 6}, 39);
  Tensor<double> w = randn({6, 6}, 40);
  auto run = [&]() {
    Tape<double> t;
    Var p = t.param("w", w);
    Var loss = t.mean(t.gelu(t.matmul(t.input(x), p)));
    t.backward(loss);
    return std::make_pair(t.scalar(loss), t.grad(p));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}
