#include <gtest/gtest.h>

#include "mcstra/metrics.hpp"

using namespace mcstra;

namespace {

Tensor<double> random_img(int h, int w, std::uint64_t seed) {
  Tensor<double> t({h, w});
  Rng rng(seed);
  for (double& v : t.data) v = rng.uniform();
  return t;
}

}  // namespace

TEST(Metrics, SelfComparison) {
  Tensor<double> x = random_img(16, 16, 1);
  EXPECT_EQ(nmse(x, x), 0.0);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  EXPECT_EQ(psnr(x, x), std::numeric_limits<double>::infinity());
}

TEST(Metrics, NmseOfZeroPredictionIsOne) {
  Tensor<double> x = random_img(8, 8, 2);
  Tensor<double> z({8, 8});
  EXPECT_NEAR(nmse(z, x), 1.0, 1e-12);
}

TEST(Metrics, PsnrClosedForm) {
  // max(ref) = 1, MSE = 1e-4 -> 40 dB
  Tensor<double> ref({10, 10});
  ref.data[0] = 1.0;
  Tensor<double> pred = ref;
  for (double& v : pred.data) v += 0.01;  // MSE = 1e-4 exactly
  EXPECT_NEAR(psnr(pred, ref), 40.0, 1e-9);
}

TEST(Metrics, SsimSymmetricWithFixedRange) {
  Tensor<double> a = random_img(12, 12, 3);
  Tensor<double> b = random_img(12, 12, 4);
  EXPECT_NEAR(ssim(a, b, 1.0), ssim(b, a, 1.0), 1e-9);
}

TEST(Metrics, SsimRange) {
  Tensor<double> a = random_img(10, 10, 5);
  Tensor<double> b = random_img(10, 10, 6);
  const double s = ssim(a, b);
  EXPECT_GE(s, -1.0);
  EXPECT_LE(s, 1.0);
  // anti-correlated images score lower than identical ones
  Tensor<double> neg = a;
  for (double& v : neg.data) v = 1.0 - v;
  EXPECT_LT(ssim(a, neg, 1.0), 1.0);
}

TEST(Metrics, PsnrNmseMonotoneThroughMse) {
  Tensor<double> ref = random_img(8, 8, 7);
  Tensor<double> near = ref, far = ref;
  for (double& v : near.data) v += 0.01;
  for (double& v : far.data) v += 0.1;
  EXPECT_LT(nmse(near, ref), nmse(far, ref));
  EXPECT_GT(psnr(near, ref), psnr(far, ref));
}

TEST(Metrics, DegenerateInputsRejected) {
  Tensor<double> z({8, 8});
  Tensor<double> x = random_img(8, 8, 8);
  EXPECT_THROW(nmse(x, z), std::domain_error);
  EXPECT_THROW(psnr(x, z), std::domain_error);
  EXPECT_THROW(ssim(x, z), std::domain_error);
  Tensor<double> small = random_img(4, 4, 9);
  EXPECT_THROW(ssim(small, small), std::invalid_argument);
  Tensor<double> other({8, 4});
  EXPECT_THROW(nmse(x, other), std::invalid_argument);
}
