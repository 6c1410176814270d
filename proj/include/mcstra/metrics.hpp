#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mcstra/tensor.hpp"

namespace mcstra {

// Magnitude-image quality metrics following the fastMRI conventions:
// NMSE = ||p - r||^2 / ||r||^2, PSNR against max(ref)^2, SSIM with a
// 7x7 uniform window, K1 = 0.01, K2 = 0.03, dynamic range max(ref).

template <typename T>
double nmse(const Tensor<T>& pred, const Tensor<T>& ref) {
  if (pred.shape != ref.shape) throw std::invalid_argument("nmse: shape mismatch");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double d = double(pred.data[i]) - double(ref.data[i]);
    num += d * d;
    den += double(ref.data[i]) * double(ref.data[i]);
  }
  if (den == 0.0) throw std::domain_error("nmse: reference is identically zero");
  return num / den;
}

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& ref) {
  if (pred.shape != ref.shape) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0, peak = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double d = double(pred.data[i]) - double(ref.data[i]);
    mse += d * d;
    peak = std::max(peak, std::abs(double(ref.data[i])));
  }
  mse /= double(ref.size());
  if (peak == 0.0) throw std::domain_error("psnr: reference is identically zero");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Mean local SSIM over all fully-contained (valid) window positions.
// data_range <= 0 means "use max(ref)".
template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& ref, double data_range = 0.0) {
  if (pred.shape != ref.shape || pred.rank() != 2) {
    throw std::invalid_argument("ssim: want two equal [h,w] images");
  }
  const int h = pred.dim(0), w = pred.dim(1);
  constexpr int win = 7;
  if (h < win || w < win) throw std::invalid_argument("ssim: image smaller than 7x7 window");
  if (data_range <= 0.0) {
    for (size_t i = 0; i < ref.size(); ++i) data_range = std::max(data_range, std::abs(double(ref.data[i])));
    if (data_range == 0.0) throw std::domain_error("ssim: reference is identically zero");
  }
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double np = double(win) * win;
  const double cov_norm = np / (np - 1.0);  // unbiased, as in the reference toolkit
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i + win <= h; ++i) {
    for (int j = 0; j + win <= w; ++j) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int a = 0; a < win; ++a) {
        for (int b = 0; b < win; ++b) {
          const double x = double(pred.data[size_t(i + a) * w + j + b]);
          const double y = double(ref.data[size_t(i + a) * w + j + b]);
          sx += x;
          sy += y;
          sxx += x * x;
          syy += y * y;
          sxy += x * y;
        }
      }
      const double ux = sx / np, uy = sy / np;
      const double vx = cov_norm * (sxx / np - ux * ux);
      const double vy = cov_norm * (syy / np - uy * uy);
      const double vxy = cov_norm * (sxy / np - ux * uy);
      acc += ((2 * ux * uy + c1) * (2 * vxy + c2)) /
             ((ux * ux + uy * uy + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / double(count);
}

}  // namespace mcstra
