#pragma once

#include <vector>

#include "mcstra/tape.hpp"

namespace mcstra {

// Central-difference oracle. f builds a scalar loss on a fresh tape
// from a single tensor input; the analytic tape gradient is compared
// against (f(x+eps) - f(x-eps)) / (2 eps) per entry. Returns the worst
// relative error, with the denominator floored so that matching
// near-zero gradients do not register as failures.
template <typename T, typename F>
double grad_check(F&& f, const Tensor<T>& x, double eps,
                  const std::vector<size_t>* entries = nullptr) {
  Tape<T> tape;
  Var vx = tape.param("x", x);
  Var loss = f(tape, vx);
  tape.backward(loss);
  const std::vector<T> g = tape.grad(vx);

  auto eval = [&](const Tensor<T>& p) {
    Tape<T> t;
    return t.scalar(f(t, t.input(p)));
  };

  std::vector<size_t> all;
  if (!entries) {
    all.resize(x.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    entries = &all;
  }

  double max_rel = 0.0;
  for (size_t i : *entries) {
    Tensor<T> xp = x, xm = x;
    xp.data[i] = T(double(xp.data[i]) + eps);
    xm.data[i] = T(double(xm.data[i]) - eps);
    const double fd = (eval(xp) - eval(xm)) / (2.0 * eps);
    const double an = double(g[i]);
    const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
    max_rel = std::max(max_rel, std::abs(an - fd) / denom);
  }
  return max_rel;
}

}  // namespace mcstra
