#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcstra/complex_raster.hpp"
#include "mcstra/dc.hpp"
#include "mcstra/fft.hpp"
#include "mcstra/tensor.hpp"

namespace mcstra {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
};

// Reverse-mode Wengert list over dense real tensors. Nodes are created
// in topological order by construction, so backward() is a reverse
// replay. One tape per training step; tensors on it are immutable once
// written. Every op validates that its output is finite.
template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::function<void()> backward;  // accumulates into parent grads
  };

  Var input(Tensor<T> v) { return push(std::move(v.shape), std::move(v.data), {}, "input"); }

  // Registers a trainable leaf. Gradients are collected per parameter
  // in registration order after backward().
  Var param(const std::string& name, const Tensor<T>& v) {
    Var out = push(v.shape, v.data, {}, "param");
    params_.push_back({name, out.id});
    return out;
  }

  const Shape& shape(Var v) const { return node(v).shape; }
  const std::vector<T>& value(Var v) const { return node(v).value; }
  const std::vector<T>& grad(Var v) const { return node(v).grad; }

  double scalar(Var v) const {
    if (node(v).value.size() != 1) throw std::invalid_argument("scalar: tensor is not scalar");
    return double(node(v).value[0]);
  }

  Tensor<T> tensor(Var v) const { return Tensor<T>(node(v).shape, node(v).value); }

  const std::vector<std::pair<std::string, int>>& params() const { return params_; }

  size_t node_count() const { return nodes_.size(); }

  // Reverse replay from a scalar loss. Calling twice without a fresh
  // tape is an error (gradients would double-accumulate).
  void backward(Var loss) {
    if (backward_done_) throw std::logic_error("backward: already called on this tape");
    if (node(loss).value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(node(loss).shape));
    }
    backward_done_ = true;
    for (Node& n : nodes_) n.grad.assign(n.value.size(), T(0));
    nodes_[size_t(loss.id)].grad[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      if (nodes_[size_t(id)].backward) nodes_[size_t(id)].backward();
    }
    for (auto& [name, id] : params_) {
      if (!all_finite(nodes_[size_t(id)].grad)) {
        throw std::runtime_error("backward: non-finite gradient for parameter " + name);
      }
    }
  }

  // ---- ops ----

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(node(a).value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = node(a).value[i] + node(b).value[i];
    Var o = push(node(a).shape, std::move(out), {}, "add");
    set_backward(o, [this, a, b, o] {
      accumulate(a, node(o).grad, T(1));
      accumulate(b, node(o).grad, T(1));
    });
    return o;
  }

  // [n, d] + [d], bias broadcast over rows
  Var add_rowvec(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sb.size() != 1 || sa.empty() || sa.back() != sb[0]) {
      throw std::invalid_argument("add_rowvec: shapes " + shape_str(sa) + " and " +
                                  shape_str(sb));
    }
    const size_t d = size_t(sb[0]);
    std::vector<T> out(node(a).value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = node(a).value[i] + node(b).value[i % d];
    Var o = push(sa, std::move(out), {}, "add_rowvec");
    set_backward(o, [this, a, b, o, d] {
      accumulate(a, node(o).grad, T(1));
      auto& gb = nodes_[size_t(b.id)].grad;
      const auto& g = node(o).grad;
      for (size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
    });
    return o;
  }

  Var scale(Var a, double c) {
    std::vector<T> out(node(a).value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = T(double(node(a).value[i]) * c);
    Var o = push(node(a).shape, std::move(out), {}, "scale");
    set_backward(o, [this, a, o, c] { accumulate(a, node(o).grad, T(c)); });
    return o;
  }

  // Elementwise multiply by a constant (non-trainable) map.
  Var const_mul(Var a, std::shared_ptr<const std::vector<T>> w) {
    if (w->size() != node(a).value.size()) throw std::invalid_argument("const_mul: size mismatch");
    std::vector<T> out(node(a).value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = node(a).value[i] * (*w)[i];
    Var o = push(node(a).shape, std::move(out), {}, "const_mul");
    set_backward(o, [this, a, o, w] {
      auto& ga = nodes_[size_t(a.id)].grad;
      const auto& g = node(o).grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*w)[i];
    });
    return o;
  }

  Var const_add(Var a, std::shared_ptr<const std::vector<T>> c) {
    if (c->size() != node(a).value.size()) throw std::invalid_argument("const_add: size mismatch");
    std::vector<T> out(node(a).value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = node(a).value[i] + (*c)[i];
    Var o = push(node(a).shape, std::move(out), {}, "const_add");
    set_backward(o, [this, a, o] { accumulate(a, node(o).grad, T(1)); });
    return o;
  }

  Var matmul(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
      throw std::invalid_argument("matmul: shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    const int n = sa[0], k = sa[1], m = sb[1];
    std::vector<T> out(size_t(n) * m);
    matmul_kernel(node(a).value.data(), node(b).value.data(), out.data(), n, k, m);
    Var o = push({n, m}, std::move(out), {}, "matmul");
    set_backward(o, [this, a, b, o, n, k, m] {
      const auto& g = node(o).grad;
      const auto& av = node(a).value;
      const auto& bv = node(b).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gb = nodes_[size_t(b.id)].grad;
      // ga += g * b^T
      for (int i = 0; i < n; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const T* grow = &g[size_t(i) * m];
          const T* brow = &bv[size_t(kk) * m];
          for (int j = 0; j < m; ++j) acc += double(grow[j]) * double(brow[j]);
          ga[size_t(i) * k + kk] += T(acc);
        }
      }
      // gb += a^T * g
      for (int i = 0; i < n; ++i) {
        const T* arow = &av[size_t(i) * k];
        const T* grow = &g[size_t(i) * m];
        for (int kk = 0; kk < k; ++kk) {
          const double aik = double(arow[kk]);
          T* gbrow = &gb[size_t(kk) * m];
          for (int j = 0; j < m; ++j) gbrow[j] += T(aik * double(grow[j]));
        }
      }
    });
    return o;
  }

  // Batched matmul, [B,n,k] x [B,k,m] -> [B,n,m].
  Var bmm(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
      throw std::invalid_argument("bmm: shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    const int B = sa[0], n = sa[1], k = sa[2], m = sb[2];
    std::vector<T> out(size_t(B) * n * m);
    for (int bb = 0; bb < B; ++bb) {
      matmul_kernel(&node(a).value[size_t(bb) * n * k], &node(b).value[size_t(bb) * k * m],
                    &out[size_t(bb) * n * m], n, k, m);
    }
    Var o = push({B, n, m}, std::move(out), {}, "bmm");
    set_backward(o, [this, a, b, o, B, n, k, m] {
      const auto& g = node(o).grad;
      const auto& av = node(a).value;
      const auto& bv = node(b).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gb = nodes_[size_t(b.id)].grad;
      for (int bb = 0; bb < B; ++bb) {
        const T* gB = &g[size_t(bb) * n * m];
        const T* aB = &av[size_t(bb) * n * k];
        const T* bB = &bv[size_t(bb) * k * m];
        T* gaB = &ga[size_t(bb) * n * k];
        T* gbB = &gb[size_t(bb) * k * m];
        for (int i = 0; i < n; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += double(gB[size_t(i) * m + j]) * double(bB[size_t(kk) * m + j]);
            gaB[size_t(i) * k + kk] += T(acc);
          }
        }
        for (int i = 0; i < n; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            const double aik = double(aB[size_t(i) * k + kk]);
            for (int j = 0; j < m; ++j) {
              gbB[size_t(kk) * m + j] += T(aik * double(gB[size_t(i) * m + j]));
            }
          }
        }
      }
    });
    return o;
  }

  // Batched matmul with transposed rhs, [B,n,k] x [B,m,k] -> [B,n,m].
  Var bmm_nt(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2]) {
      throw std::invalid_argument("bmm_nt: shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    const int B = sa[0], n = sa[1], k = sa[2], m = sb[1];
    std::vector<T> out(size_t(B) * n * m);
    for (int bb = 0; bb < B; ++bb) {
      const T* aB = &node(a).value[size_t(bb) * n * k];
      const T* bB = &node(b).value[size_t(bb) * m * k];
      T* oB = &out[size_t(bb) * n * m];
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
          double acc = 0.0;
          for (int kk = 0; kk < k; ++kk) acc += double(aB[size_t(i) * k + kk]) * double(bB[size_t(j) * k + kk]);
          oB[size_t(i) * m + j] = T(acc);
        }
      }
    }
    Var o = push({B, n, m}, std::move(out), {}, "bmm_nt");
    set_backward(o, [this, a, b, o, B, n, k, m] {
      const auto& g = node(o).grad;
      const auto& av = node(a).value;
      const auto& bv = node(b).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gb = nodes_[size_t(b.id)].grad;
      for (int bb = 0; bb < B; ++bb) {
        const T* gB = &g[size_t(bb) * n * m];
        const T* aB = &av[size_t(bb) * n * k];
        const T* bB = &bv[size_t(bb) * m * k];
        T* gaB = &ga[size_t(bb) * n * k];
        T* gbB = &gb[size_t(bb) * m * k];
        // ga += g * b           [n,m] x [m,k]
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) {
            const double gij = double(gB[size_t(i) * m + j]);
            for (int kk = 0; kk < k; ++kk) {
              gaB[size_t(i) * k + kk] += T(gij * double(bB[size_t(j) * k + kk]));
            }
          }
        }
        // gb += g^T * a         [m,n] x [n,k]
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) {
            const double gij = double(gB[size_t(i) * m + j]);
            for (int kk = 0; kk < k; ++kk) {
              gbB[size_t(j) * k + kk] += T(gij * double(aB[size_t(i) * k + kk]));
            }
          }
        }
      }
    });
    return o;
  }

  // Softmax over the last axis, stabilized by row-max subtraction.
  Var softmax_lastdim(Var a) {
    const Shape& s = node(a).shape;
    if (s.empty()) throw std::invalid_argument("softmax_lastdim: scalar input");
    const size_t d = size_t(s.back());
    const size_t rows = node(a).value.size() / d;
    std::vector<T> out(node(a).value.size());
    for (size_t r = 0; r < rows; ++r) {
      const T* x = &node(a).value[r * d];
      T* y = &out[r * d];
      double mx = double(x[0]);
      for (size_t i = 1; i < d; ++i) mx = std::max(mx, double(x[i]));
      double denom = 0.0;
      for (size_t i = 0; i < d; ++i) {
        const double e = std::exp(double(x[i]) - mx);
        y[i] = T(e);
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (size_t i = 0; i < d; ++i) y[i] = T(double(y[i]) * inv);
    }
    Var o = push(s, std::move(out), {}, "softmax");
    set_backward(o, [this, a, o, d, rows] {
      const auto& g = node(o).grad;
      const auto& y = node(o).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      for (size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (size_t i = 0; i < d; ++i) dot += double(g[r * d + i]) * double(y[r * d + i]);
        for (size_t i = 0; i < d; ++i) {
          ga[r * d + i] += T(double(y[r * d + i]) * (double(g[r * d + i]) - dot));
        }
      }
    });
    return o;
  }

  // Per-row normalization over the last axis followed by a learned
  // elementwise affine.
  Var layer_norm(Var a, Var gain, Var bias, double eps) {
    const Shape& s = node(a).shape;
    const size_t d = size_t(s.back());
    if (node(gain).value.size() != d || node(bias).value.size() != d) {
      throw std::invalid_argument("layer_norm: gain/bias must have last-dim length");
    }
    const size_t rows = node(a).value.size() / d;
    std::vector<T> out(node(a).value.size());
    auto xhat = std::make_shared<std::vector<T>>(node(a).value.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (size_t r = 0; r < rows; ++r) {
      const T* x = &node(a).value[r * d];
      double mean = 0.0;
      for (size_t i = 0; i < d; ++i) mean += double(x[i]);
      mean /= double(d);
      double var = 0.0;
      for (size_t i = 0; i < d; ++i) {
        const double c = double(x[i]) - mean;
        var += c * c;
      }
      var /= double(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = inv;
      for (size_t i = 0; i < d; ++i) {
        const double xh = (double(x[i]) - mean) * inv;
        (*xhat)[r * d + i] = T(xh);
        out[r * d + i] = T(xh * double(node(gain).value[i]) + double(node(bias).value[i]));
      }
    }
    Var o = push(s, std::move(out), {}, "layer_norm");
    set_backward(o, [this, a, gain, bias, o, d, rows, xhat, inv_std] {
      const auto& g = node(o).grad;
      const auto& gv = node(gain).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gg = nodes_[size_t(gain.id)].grad;
      auto& gb = nodes_[size_t(bias.id)].grad;
      for (size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (size_t i = 0; i < d; ++i) {
          const double dxh = double(g[r * d + i]) * double(gv[i]);
          m1 += dxh;
          m2 += dxh * double((*xhat)[r * d + i]);
        }
        m1 /= double(d);
        m2 /= double(d);
        for (size_t i = 0; i < d; ++i) {
          const double dxh = double(g[r * d + i]) * double(gv[i]);
          ga[r * d + i] += T((*inv_std)[r] * (dxh - m1 - double((*xhat)[r * d + i]) * m2));
          gg[i] += T(double(g[r * d + i]) * double((*xhat)[r * d + i]));
          gb[i] += g[r * d + i];
        }
      }
    });
    return o;
  }

  // Exact (erf-based) GELU.
  Var gelu(Var a) {
    std::vector<T> out(node(a).value.size());
    for (size_t i = 0; i < out.size(); ++i) {
      const double x = double(node(a).value[i]);
      out[i] = T(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
    }
    Var o = push(node(a).shape, std::move(out), {}, "gelu");
    set_backward(o, [this, a, o] {
      const auto& g = node(o).grad;
      const auto& x = node(a).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        const double xi = double(x[i]);
        const double phi = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * xi * xi) * 0.3989422804014327;
        ga[i] += T(double(g[i]) * (phi + xi * pdf));
      }
    });
    return o;
  }

  // out[i] = in[idx[i]]. All structural movement (window partition and
  // reverse, cyclic shifts, head split/merge, patch regrouping) is a
  // gather with a precomputed index table; backward is scatter-add.
  Var gather(Var a, std::shared_ptr<const std::vector<int>> idx, Shape out_shape) {
    if (numel(out_shape) != idx->size()) {
      throw std::invalid_argument("gather: index table does not match output shape");
    }
    const auto& av = node(a).value;
    std::vector<T> out(idx->size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[size_t((*idx)[i])];
    Var o = push(std::move(out_shape), std::move(out), {}, "gather");
    set_backward(o, [this, a, o, idx] {
      const auto& g = node(o).grad;
      auto& ga = nodes_[size_t(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[size_t((*idx)[i])] += g[i];
    });
    return o;
  }

  Var reshape(Var a, Shape s) {
    if (numel(s) != node(a).value.size()) {
      throw std::invalid_argument("reshape: " + shape_str(node(a).shape) + " -> " + shape_str(s));
    }
    Var o = push(std::move(s), std::vector<T>(node(a).value), {}, "reshape");
    set_backward(o, [this, a, o] { accumulate(a, node(o).grad, T(1)); });
    return o;
  }

  // Concatenation along the last axis; leading dims must agree.
  Var concat_lastdim(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() != sb.size() || sa.empty()) {
      throw std::invalid_argument("concat_lastdim: rank mismatch");
    }
    for (size_t i = 0; i + 1 < sa.size(); ++i) {
      if (sa[i] != sb[i]) throw std::invalid_argument("concat_lastdim: leading dims differ");
    }
    const size_t da = size_t(sa.back()), db = size_t(sb.back());
    const size_t rows = node(a).value.size() / da;
    Shape so = sa;
    so.back() = int(da + db);
    std::vector<T> out(rows * (da + db));
    for (size_t r = 0; r < rows; ++r) {
      for (size_t i = 0; i < da; ++i) out[r * (da + db) + i] = node(a).value[r * da + i];
      for (size_t i = 0; i < db; ++i) out[r * (da + db) + da + i] = node(b).value[r * db + i];
    }
    Var o = push(std::move(so), std::move(out), {}, "concat");
    set_backward(o, [this, a, b, o, da, db, rows] {
      const auto& g = node(o).grad;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gb = nodes_[size_t(b.id)].grad;
      for (size_t r = 0; r < rows; ++r) {
        for (size_t i = 0; i < da; ++i) ga[r * da + i] += g[r * (da + db) + i];
        for (size_t i = 0; i < db; ++i) gb[r * db + i] += g[r * (da + db) + da + i];
      }
    });
    return o;
  }

  // [2,h,w] -> [h,w], sqrt(re^2 + im^2 + eps^2). eps keeps the gradient
  // defined at the origin.
  Var two_channel_magnitude(Var a, double eps = 1e-12) {
    const Shape& s = node(a).shape;
    if (s.size() != 3 || s[0] != 2) {
      throw std::invalid_argument("two_channel_magnitude: want [2,h,w], got " + shape_str(s));
    }
    const size_t hw = size_t(s[1]) * s[2];
    std::vector<T> out(hw);
    for (size_t i = 0; i < hw; ++i) {
      const double re = double(node(a).value[i]);
      const double im = double(node(a).value[hw + i]);
      out[i] = T(std::sqrt(re * re + im * im + eps * eps));
    }
    Var o = push({s[1], s[2]}, std::move(out), {}, "magnitude");
    set_backward(o, [this, a, o, hw] {
      const auto& g = node(o).grad;
      const auto& m = node(o).value;
      const auto& x = node(a).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      for (size_t i = 0; i < hw; ++i) {
        const double inv = 1.0 / double(m[i]);
        ga[i] += T(double(g[i]) * double(x[i]) * inv);
        ga[hw + i] += T(double(g[i]) * double(x[hw + i]) * inv);
      }
    });
    return o;
  }

  // Mean absolute difference; subgradient takes 0 at exact ties.
  Var l1_loss(Var a, Var b) {
    check_same_shape(a, b, "l1_loss");
    const size_t n = node(a).value.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::abs(double(node(a).value[i]) - double(node(b).value[i]));
    Var o = push({1}, {T(acc / double(n))}, {}, "l1_loss");
    set_backward(o, [this, a, b, o, n] {
      const double g = double(node(o).grad[0]) / double(n);
      const auto& av = node(a).value;
      const auto& bv = node(b).value;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gb = nodes_[size_t(b.id)].grad;
      for (size_t i = 0; i < n; ++i) {
        const double d = double(av[i]) - double(bv[i]);
        const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        ga[i] += T(g * s);
        gb[i] -= T(g * s);
      }
    });
    return o;
  }

  Var sum(Var a) {
    double acc = 0.0;
    for (const T& v : node(a).value) acc += double(v);
    Var o = push({1}, {T(acc)}, {}, "sum");
    set_backward(o, [this, a, o] { accumulate_broadcast(a, node(o).grad[0]); });
    return o;
  }

  Var mean(Var a) {
    const size_t n = node(a).value.size();
    double acc = 0.0;
    for (const T& v : node(a).value) acc += double(v);
    Var o = push({1}, {T(acc / double(n))}, {}, "mean");
    set_backward(o, [this, a, o, n] { accumulate_broadcast(a, T(double(node(o).grad[0]) / double(n))); });
    return o;
  }

  // Centered orthonormal 2D FFT over a complex field stored as two real
  // channels. The transform is unitary, so the pullback of fft2c is
  // ifft2c applied to the gradient field (and vice versa).
  Var fft2c_2ch(Var a) { return fourier_2ch(a, /*inverse=*/false); }
  Var ifft2c_2ch(Var a) { return fourier_2ch(a, /*inverse=*/true); }

  // k-space data-consistency blend with fixed weight: sampled columns
  // become keep*x + feed*y_meas, unsampled pass through.
  Var dc_blend(Var a, std::shared_ptr<const std::vector<T>> y_meas,
               std::shared_ptr<const std::vector<std::uint8_t>> col_sampled, DcWeight w) {
    const Shape& s = node(a).shape;
    if (s.size() != 3 || s[0] != 2) throw std::invalid_argument("dc_blend: want [2,h,w]");
    if (y_meas->size() != node(a).value.size()) throw std::invalid_argument("dc_blend: y size");
    const int h = s[1], wd = s[2];
    if (int(col_sampled->size()) != wd) throw std::invalid_argument("dc_blend: mask width");
    const double keep = w.keep_factor(), feed = w.feed_factor();
    std::vector<T> out(node(a).value.size());
    for (int ch = 0; ch < 2; ++ch) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
          const size_t e = (size_t(ch) * h + i) * wd + j;
          out[e] = (*col_sampled)[j]
                       ? T(keep * double(node(a).value[e]) + feed * double((*y_meas)[e]))
                       : node(a).value[e];
        }
      }
    }
    Var o = push(s, std::move(out), {}, "dc_blend");
    set_backward(o, [this, a, o, col_sampled, keep, h, wd] {
      const auto& g = node(o).grad;
      auto& ga = nodes_[size_t(a.id)].grad;
      for (int ch = 0; ch < 2; ++ch) {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < wd; ++j) {
            const size_t e = (size_t(ch) * h + i) * wd + j;
            ga[e] += (*col_sampled)[j] ? T(keep * double(g[e])) : g[e];
          }
        }
      }
    });
    return o;
  }

  // Data-consistency blend with a trainable nonnegative lambda scalar.
  Var dc_blend_trainable(Var a, Var lambda_raw, std::shared_ptr<const std::vector<T>> y_meas,
                         std::shared_ptr<const std::vector<std::uint8_t>> col_sampled) {
    const Shape& s = node(a).shape;
    if (s.size() != 3 || s[0] != 2) throw std::invalid_argument("dc_blend: want [2,h,w]");
    if (node(lambda_raw).value.size() != 1) {
      throw std::invalid_argument("dc_blend_trainable: lambda must be scalar");
    }
    const int h = s[1], wd = s[2];
    const double lam = std::max(0.0, double(node(lambda_raw).value[0]));
    const double keep = 1.0 / (1.0 + lam), feed = lam / (1.0 + lam);
    std::vector<T> out(node(a).value.size());
    for (int ch = 0; ch < 2; ++ch) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
          const size_t e = (size_t(ch) * h + i) * wd + j;
          out[e] = (*col_sampled)[j]
                       ? T(keep * double(node(a).value[e]) + feed * double((*y_meas)[e]))
                       : node(a).value[e];
        }
      }
    }
    Var o = push(s, std::move(out), {}, "dc_blend_trainable");
    set_backward(o, [this, a, lambda_raw, o, y_meas, col_sampled, keep, lam, h, wd] {
      const auto& g = node(o).grad;
      auto& ga = nodes_[size_t(a.id)].grad;
      auto& gl = nodes_[size_t(lambda_raw.id)].grad;
      const double dscale = 1.0 / ((1.0 + lam) * (1.0 + lam));
      double glam = 0.0;
      for (int ch = 0; ch < 2; ++ch) {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < wd; ++j) {
            const size_t e = (size_t(ch) * h + i) * wd + j;
            if ((*col_sampled)[j]) {
              ga[e] += T(keep * double(g[e]));
              glam += double(g[e]) * (double((*y_meas)[e]) - double(node(a).value[e])) * dscale;
            } else {
              ga[e] += g[e];
            }
          }
        }
      }
      gl[0] += T(glam);
    });
    return o;
  }

 private:
  std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
  std::vector<std::pair<std::string, int>> params_;
  bool backward_done_ = false;

  Node& node(Var v) { return nodes_.at(size_t(v.id)); }
  const Node& node(Var v) const { return nodes_.at(size_t(v.id)); }

  Var push(Shape shape, std::vector<T> value, std::function<void()> bwd, const char* op) {
    if (!all_finite(value)) {
      throw std::runtime_error(std::string("tape: non-finite output of op '") + op + "'");
    }
    nodes_.push_back(Node{std::move(shape), std::move(value), {}, std::move(bwd)});
    return Var{int(nodes_.size()) - 1};
  }

  void set_backward(Var v, std::function<void()> fn) { node(v).backward = std::move(fn); }

  void check_same_shape(Var a, Var b, const char* op) {
    if (node(a).shape != node(b).shape) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(node(a).shape) + " vs " + shape_str(node(b).shape));
    }
  }

  void accumulate(Var a, const std::vector<T>& g, T factor) {
    auto& ga = node(a).grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  }

  void accumulate_broadcast(Var a, T g) {
    for (T& v : node(a).grad) v += g;
  }

  // C = A * B with f64 accumulation, row-major.
  static void matmul_kernel(const T* a, const T* b, T* c, int n, int k, int m) {
    std::vector<double> acc(static_cast<size_t>(m));
    for (int i = 0; i < n; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* arow = &a[size_t(i) * k];
      for (int kk = 0; kk < k; ++kk) {
        const double aik = double(arow[kk]);
        const T* brow = &b[size_t(kk) * m];
        for (int j = 0; j < m; ++j) acc[size_t(j)] += aik * double(brow[j]);
      }
      T* crow = &c[size_t(i) * m];
      for (int j = 0; j < m; ++j) crow[j] = T(acc[size_t(j)]);
    }
  }

  Var fourier_2ch(Var a, bool inverse) {
    const Shape& s = node(a).shape;
    if (s.size() != 3 || s[0] != 2) {
      throw std::invalid_argument("fourier: want [2,h,w], got " + shape_str(s));
    }
    const int h = s[1], w = s[2];
    auto run = [h, w](const std::vector<T>& v, bool inv) {
      ComplexRaster r(h, w);
      const size_t hw = size_t(h) * w;
      for (size_t i = 0; i < hw; ++i) r.data[i] = cplx(double(v[i]), double(v[hw + i]));
      ComplexRaster t = inv ? ifft2c(r) : fft2c(r);
      std::vector<T> out(2 * hw);
      for (size_t i = 0; i < hw; ++i) {
        out[i] = T(t.data[i].real());
        out[hw + i] = T(t.data[i].imag());
      }
      return out;
    };
    Var o = push(s, run(node(a).value, inverse), {}, inverse ? "ifft2c" : "fft2c");
    set_backward(o, [this, a, o, run, inverse] {
      std::vector<T> gin = run(node(o).grad, !inverse);
      auto& ga = nodes_[size_t(a.id)].grad;
      for (size_t i = 0; i < gin.size(); ++i) ga[i] += gin[i];
    });
    return o;
  }
};

// matmul + row-broadcast bias.
template <typename T>
inline Var affine(Tape<T>& t, Var x, Var w, Var b) {
  return t.add_rowvec(t.matmul(x, w), b);
}

}  // namespace mcstra
