#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcstra/tensor.hpp"

namespace mcstra {

// RMSProp: v <- rho v + (1-rho) g^2; p <- p - lr g / (sqrt(v) + eps).
// An optional global-norm clip is applied to the whole gradient first.
class Rmsprop {
 public:
  Rmsprop(double lr, double rho, double eps, double clip_norm)
      : lr_(lr), rho_(rho), eps_(eps), clip_norm_(clip_norm) {}

  const std::vector<std::vector<float>>& state() const { return sq_; }
  std::vector<std::vector<float>>& state() { return sq_; }

  // params and grads are aligned lists; shapes must match.
  void step(const std::vector<std::pair<std::string, Tensor<float>*>>& params,
            const std::vector<std::vector<float>>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("rmsprop: size mismatch");
    if (sq_.empty()) {
      for (const auto& [name, p] : params) sq_.emplace_back(p->size(), 0.0f);
    }
    if (sq_.size() != params.size()) throw std::invalid_argument("rmsprop: stale state");

    double norm_sq = 0.0;
    for (size_t k = 0; k < params.size(); ++k) {
      if (params[k].second->size() != grads[k].size()) {
        throw std::invalid_argument("rmsprop: gradient shape mismatch for " + params[k].first);
      }
      for (float g : grads[k]) {
        if (!std::isfinite(g)) {
          throw std::runtime_error("rmsprop: non-finite gradient for " + params[k].first +
                                   ", aborting step");
        }
        norm_sq += double(g) * double(g);
      }
    }
    double scale = 1.0;
    if (clip_norm_ > 0.0) {
      const double norm = std::sqrt(norm_sq);
      if (norm > clip_norm_) scale = clip_norm_ / norm;
    }
    for (size_t k = 0; k < params.size(); ++k) {
      Tensor<float>& p = *params[k].second;
      std::vector<float>& v = sq_[k];
      const std::vector<float>& g = grads[k];
      for (size_t i = 0; i < p.size(); ++i) {
        const double gi = double(g[i]) * scale;
        const double vi = rho_ * double(v[i]) + (1.0 - rho_) * gi * gi;
        v[i] = float(vi);
        p.data[i] = float(double(p.data[i]) - lr_ * gi / (std::sqrt(vi) + eps_));
      }
    }
  }

 private:
  double lr_, rho_, eps_, clip_norm_;
  std::vector<std::vector<float>> sq_;
};

}  // namespace mcstra
