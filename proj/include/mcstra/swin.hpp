#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcstra/tape.hpp"

namespace mcstra {

// ---- geometry -------------------------------------------------------

// Token-grid handle on a tape: rows*cols tokens of width dim.
struct TokenGrid {
  int rows = 0, cols = 0, dim = 0;
  Var tokens;  // [rows*cols, dim]
};

using IndexTable = std::shared_ptr<const std::vector<int>>;

namespace winidx {

inline IndexTable make(std::vector<int> v) {
  return std::make_shared<const std::vector<int>>(std::move(v));
}

// [c,h,w] -> [tokens, c*p*p], tokens in row-major patch order.
inline IndexTable patchify(int c, int h, int w, int p) {
  const int pr = h / p, pc = w / p;
  std::vector<int> idx(size_t(pr) * pc * c * p * p);
  size_t o = 0;
  for (int tr = 0; tr < pr; ++tr) {
    for (int tc = 0; tc < pc; ++tc) {
      for (int ch = 0; ch < c; ++ch) {
        for (int di = 0; di < p; ++di) {
          for (int dj = 0; dj < p; ++dj) {
            idx[o++] = (ch * h + tr * p + di) * w + tc * p + dj;
          }
        }
      }
    }
  }
  return make(std::move(idx));
}

// grid [rows*cols, dim] -> windows [(nw*M*M), dim], (window, position) order.
inline IndexTable window_partition(int rows, int cols, int m, int dim) {
  std::vector<int> idx(size_t(rows) * cols * dim);
  size_t o = 0;
  for (int wr = 0; wr < rows / m; ++wr) {
    for (int wc = 0; wc < cols / m; ++wc) {
      for (int ir = 0; ir < m; ++ir) {
        for (int ic = 0; ic < m; ++ic) {
          const int tok = (wr * m + ir) * cols + wc * m + ic;
          for (int d = 0; d < dim; ++d) idx[o++] = tok * dim + d;
        }
      }
    }
  }
  return make(std::move(idx));
}

inline IndexTable invert(const IndexTable& t) {
  std::vector<int> inv(t->size());
  for (size_t i = 0; i < t->size(); ++i) inv[size_t((*t)[i])] = int(i);
  return make(std::move(inv));
}

// torus roll by (-s, -s): out(r,c) = in((r+s) mod rows, (c+s) mod cols)
inline IndexTable cyclic_shift(int rows, int cols, int s, int dim) {
  std::vector<int> idx(size_t(rows) * cols * dim);
  size_t o = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int tok = ((r + s) % rows) * cols + (c + s) % cols;
      for (int d = 0; d < dim; ++d) idx[o++] = tok * dim + d;
    }
  }
  return make(std::move(idx));
}

// windows [nw*M*M, heads*hd] -> [nw*heads, M*M, hd]
inline IndexTable head_split(int nw, int m2, int heads, int hd) {
  std::vector<int> idx(size_t(nw) * heads * m2 * hd);
  size_t o = 0;
  for (int w = 0; w < nw; ++w) {
    for (int h = 0; h < heads; ++h) {
      for (int p = 0; p < m2; ++p) {
        for (int c = 0; c < hd; ++c) idx[o++] = (w * m2 + p) * heads * hd + h * hd + c;
      }
    }
  }
  return make(std::move(idx));
}

// 2x2 token groups concatenated: [rows*cols, dim] -> [rows/2*cols/2, 4*dim]
inline IndexTable merge_groups(int rows, int cols, int dim) {
  std::vector<int> idx(size_t(rows) * cols * dim);
  size_t o = 0;
  for (int r = 0; r < rows / 2; ++r) {
    for (int c = 0; c < cols / 2; ++c) {
      for (int q = 0; q < 4; ++q) {
        const int tok = (2 * r + q / 2) * cols + 2 * c + q % 2;
        for (int d = 0; d < dim; ++d) idx[o++] = tok * dim + d;
      }
    }
  }
  return make(std::move(idx));
}

// [rows*cols, d2] -> [2rows*2cols, d2/4]; sub-token (di,dj) of a token
// reads channels [(2di+dj)*d2/4, ...). Inverse pairing of merge_groups.
inline IndexTable expand_groups(int rows, int cols, int d2) {
  const int dq = d2 / 4;
  std::vector<int> idx(size_t(rows) * cols * d2);
  size_t o = 0;
  for (int r = 0; r < 2 * rows; ++r) {
    for (int c = 0; c < 2 * cols; ++c) {
      const int tok = (r / 2) * cols + c / 2;
      const int q = (r % 2) * 2 + c % 2;
      for (int d = 0; d < dq; ++d) idx[o++] = tok * d2 + q * dq + d;
    }
  }
  return make(std::move(idx));
}

// final assembly: [tokens, p*p*dim] -> [h*w, dim] pixel tokens
inline IndexTable pixel_tokens(int rows, int cols, int p, int dim) {
  const int h = rows * p, w = cols * p;
  std::vector<int> idx(size_t(h) * w * dim);
  size_t o = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const int tok = (i / p) * cols + j / p;
      const int sub = (i % p) * p + j % p;
      for (int d = 0; d < dim; ++d) idx[o++] = tok * p * p * dim + sub * dim + d;
    }
  }
  return make(std::move(idx));
}

// [h*w, c] -> [c, h, w]
inline IndexTable channels_first(int h, int w, int c) {
  std::vector<int> idx(size_t(h) * w * c);
  size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int pix = 0; pix < h * w; ++pix) idx[o++] = pix * c + ch;
  }
  return make(std::move(idx));
}

// 2x2 mean-pool source tables: four gathers over [rows*cols, dim],
// entry q selects sub-token q of each 2x2 group.
inline IndexTable pool_quadrant(int rows, int cols, int dim, int q) {
  std::vector<int> idx(size_t(rows / 2) * (cols / 2) * dim);
  size_t o = 0;
  for (int r = 0; r < rows / 2; ++r) {
    for (int c = 0; c < cols / 2; ++c) {
      const int tok = (2 * r + q / 2) * cols + 2 * c + q % 2;
      for (int d = 0; d < dim; ++d) idx[o++] = tok * dim + d;
    }
  }
  return make(std::move(idx));
}

}  // namespace winidx

// Region labels on the shifted grid; tokens in the same window may
// attend only if their labels agree (they were contiguous before the
// cyclic shift). Standard three-band construction per axis.
inline std::vector<int> shift_region_labels(int rows, int cols, int m, int s) {
  auto band = [m, s](int x, int n) {
    if (x < n - m) return 0;
    if (x < n - s) return 1;
    return 2;
  };
  std::vector<int> lab(size_t(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) lab[size_t(r) * cols + c] = band(r, rows) * 3 + band(c, cols);
  }
  return lab;
}

inline constexpr double kAttnForbid = -1e9;

// Additive attention mask, 0 for allowed pairs and -1e9 for pairs that
// cross a shift boundary. Expanded over heads: [nw*heads, M*M, M*M].
template <typename T>
std::shared_ptr<const std::vector<T>> make_shift_attn_mask(int rows, int cols, int m, int s,
                                                           int heads) {
  const int nwr = rows / m, nwc = cols / m, m2 = m * m;
  const std::vector<int> lab = shift_region_labels(rows, cols, m, s);
  auto out = std::make_shared<std::vector<T>>(size_t(nwr) * nwc * heads * m2 * m2, T(0));
  size_t o = 0;
  for (int wr = 0; wr < nwr; ++wr) {
    for (int wc = 0; wc < nwc; ++wc) {
      std::vector<int> wl(static_cast<size_t>(m2));
      for (int ir = 0; ir < m; ++ir) {
        for (int ic = 0; ic < m; ++ic) {
          wl[size_t(ir) * m + ic] = lab[size_t(wr * m + ir) * cols + wc * m + ic];
        }
      }
      for (int h = 0; h < heads; ++h) {
        for (int p = 0; p < m2; ++p) {
          for (int q = 0; q < m2; ++q) out->at(o++) = wl[p] == wl[q] ? T(0) : T(kAttnForbid);
        }
      }
    }
  }
  return out;
}

// Per-resolution plan: effective window, shift, heads, and the index
// tables every block at this resolution reuses.
template <typename T>
struct StagePlan {
  int rows = 0, cols = 0, dim = 0, heads = 0, window = 0, shift = 0;
  IndexTable win_gather, win_scatter;
  IndexTable shift_fwd, shift_bwd;
  IndexTable head_split, head_merge;
  std::shared_ptr<const std::vector<T>> attn_mask;  // null when shift == 0

  StagePlan() = default;
  StagePlan(int rows_, int cols_, int dim_, int head_dim, int window_) {
    rows = rows_;
    cols = cols_;
    dim = dim_;
    if (dim % head_dim != 0) {
      throw std::invalid_argument("stage dim " + std::to_string(dim) +
                                  " not divisible by head dim " + std::to_string(head_dim));
    }
    heads = dim / head_dim;
    // Swin rule: a window never exceeds the grid; a full-extent window
    // attends globally and needs no shift.
    window = std::min({window_, rows, cols});
    shift = window < std::min(rows, cols) ? window / 2 : 0;
    if (rows % window != 0 || cols % window != 0) {
      throw std::invalid_argument("grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " not divisible by window " + std::to_string(window));
    }
    const int nw = (rows / window) * (cols / window);
    win_gather = winidx::window_partition(rows, cols, window, dim);
    win_scatter = winidx::invert(win_gather);
    head_split = winidx::head_split(nw, window * window, heads, dim / heads);
    head_merge = winidx::invert(head_split);
    if (shift > 0) {
      shift_fwd = winidx::cyclic_shift(rows, cols, shift, dim);
      shift_bwd = winidx::invert(shift_fwd);
      attn_mask = make_shift_attn_mask<T>(rows, cols, window, shift, heads);
    }
  }

  int num_windows() const { return (rows / window) * (cols / window); }
};

// ---- parameters ------------------------------------------------------

// One Swin transformer block: pre-norm attention + pre-norm MLP, both
// residual. S is Tensor<T> for storage or Var when lifted onto a tape.
template <class S>
struct SwinBlockP {
  S ln1_g, ln1_b;
  S wq, wk, wv;  // [dim, dim], bias-free per the attention definition
  S wo, bo;      // output projection
  S ln2_g, ln2_b;
  S w1, b1, w2, b2;  // MLP, hidden = 4*dim
};

template <class S>
struct SwinStageP {
  std::vector<SwinBlockP<S>> blocks;  // even count; odd positions use the shifted window
};

template <class S>
struct SwinUnetP {
  S embed_w, embed_b;
  std::vector<SwinStageP<S>> enc;
  std::vector<S> merge_w, merge_b;
  SwinStageP<S> bottleneck;
  std::vector<S> expand_w, expand_b;  // indexed by target level
  std::vector<S> fuse_w, fuse_b;
  std::vector<SwinStageP<S>> dec;
  S final_expand_w, final_expand_b;
  S head_w, head_b;
};

template <class S, class F>
void visit_params(SwinBlockP<S>& b, const std::string& p, F&& f) {
  f(p + ".ln1_g", b.ln1_g);
  f(p + ".ln1_b", b.ln1_b);
  f(p + ".wq", b.wq);
  f(p + ".wk", b.wk);
  f(p + ".wv", b.wv);
  f(p + ".wo", b.wo);
  f(p + ".bo", b.bo);
  f(p + ".ln2_g", b.ln2_g);
  f(p + ".ln2_b", b.ln2_b);
  f(p + ".w1", b.w1);
  f(p + ".b1", b.b1);
  f(p + ".w2", b.w2);
  f(p + ".b2", b.b2);
}

template <class S, class F>
void visit_params(SwinStageP<S>& st, const std::string& p, F&& f) {
  for (size_t i = 0; i < st.blocks.size(); ++i) {
    visit_params(st.blocks[i], p + ".blk" + std::to_string(i), f);
  }
}

template <class S, class F>
void visit_params(SwinUnetP<S>& u, const std::string& p, F&& f) {
  f(p + ".embed_w", u.embed_w);
  f(p + ".embed_b", u.embed_b);
  for (size_t i = 0; i < u.enc.size(); ++i) visit_params(u.enc[i], p + ".enc" + std::to_string(i), f);
  for (size_t i = 0; i < u.merge_w.size(); ++i) {
    f(p + ".merge" + std::to_string(i) + ".w", u.merge_w[i]);
    f(p + ".merge" + std::to_string(i) + ".b", u.merge_b[i]);
  }
  visit_params(u.bottleneck, p + ".bott", f);
  for (size_t i = 0; i < u.dec.size(); ++i) {
    f(p + ".expand" + std::to_string(i) + ".w", u.expand_w[i]);
    f(p + ".expand" + std::to_string(i) + ".b", u.expand_b[i]);
    f(p + ".fuse" + std::to_string(i) + ".w", u.fuse_w[i]);
    f(p + ".fuse" + std::to_string(i) + ".b", u.fuse_b[i]);
    visit_params(u.dec[i], p + ".dec" + std::to_string(i), f);
  }
  f(p + ".final_expand_w", u.final_expand_w);
  f(p + ".final_expand_b", u.final_expand_b);
  f(p + ".head_w", u.head_w);
  f(p + ".head_b", u.head_b);
}

// Geometry of one Swin-Unet instance; built once per configuration and
// shared (read-only) across forward passes.
template <typename T>
struct SwinUnetPlan {
  int c_in = 0, c_out = 0, h = 0, w = 0, patch = 0, base_dim = 0, head_dim = 0, window = 0;
  int levels = 0;  // encoder stage count
  int rows0 = 0, cols0 = 0;
  IndexTable patch_gather;
  std::vector<StagePlan<T>> enc;   // level l at dim D*2^l
  StagePlan<T> bottleneck;         // level `levels`
  std::vector<StagePlan<T>> dec;   // same levels as enc
  std::vector<IndexTable> merge_gather;   // per encoder level
  std::vector<IndexTable> expand_gather;  // per decoder level (applied entering that level)
  IndexTable final_pixels, channels_first;

  SwinUnetPlan() = default;
  SwinUnetPlan(int c_in_, int c_out_, int h_, int w_, int patch_, int dim, int heads,
               int window_, int levels_)
      : c_in(c_in_), c_out(c_out_), h(h_), w(w_), patch(patch_), base_dim(dim), window(window_),
        levels(levels_) {
    if (h % patch != 0 || w % patch != 0) {
      throw std::invalid_argument("image " + std::to_string(h) + "x" + std::to_string(w) +
                                  " not divisible by patch " + std::to_string(patch));
    }
    if (dim % heads != 0) throw std::invalid_argument("dim not divisible by heads");
    head_dim = dim / heads;
    rows0 = h / patch;
    cols0 = w / patch;
    patch_gather = winidx::patchify(c_in, h, w, patch);
    int rows = rows0, cols = cols0, d = dim;
    for (int l = 0; l < levels; ++l) {
      enc.emplace_back(rows, cols, d, head_dim, window);
      merge_gather.push_back(winidx::merge_groups(rows, cols, d));
      dec.emplace_back(rows, cols, d, head_dim, window);
      // entering level l from level l+1: [r/2*c/2, 2d] -> affine 4d -> regroup
      expand_gather.push_back(winidx::expand_groups(rows / 2, cols / 2, 4 * d));
      if (rows % 2 != 0 || cols % 2 != 0) {
        throw std::invalid_argument("token grid not divisible by 2 at level " + std::to_string(l));
      }
      rows /= 2;
      cols /= 2;
      d *= 2;
    }
    bottleneck = StagePlan<T>(rows, cols, d, head_dim, window);
    final_pixels = winidx::pixel_tokens(rows0, cols0, patch, dim);
    channels_first = winidx::channels_first(h, w, c_out);
  }

  int tokens0() const { return rows0 * cols0; }
};

// ---- initialization --------------------------------------------------

template <typename T>
Tensor<T> uniform_fanin(Shape s, int fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(double(fan_in));
  return Tensor<T>::uniform(std::move(s), rng, -a, a);
}

template <typename T>
SwinBlockP<Tensor<T>> make_swin_block(int dim, Rng& rng) {
  SwinBlockP<Tensor<T>> b;
  b.ln1_g = Tensor<T>::full({dim}, T(1));
  b.ln1_b = Tensor<T>::zeros({dim});
  b.wq = uniform_fanin<T>({dim, dim}, dim, rng);
  b.wk = uniform_fanin<T>({dim, dim}, dim, rng);
  b.wv = uniform_fanin<T>({dim, dim}, dim, rng);
  b.wo = uniform_fanin<T>({dim, dim}, dim, rng);
  b.bo = Tensor<T>::zeros({dim});
  b.ln2_g = Tensor<T>::full({dim}, T(1));
  b.ln2_b = Tensor<T>::zeros({dim});
  b.w1 = uniform_fanin<T>({dim, 4 * dim}, dim, rng);
  b.b1 = Tensor<T>::zeros({4 * dim});
  b.w2 = uniform_fanin<T>({4 * dim, dim}, 4 * dim, rng);
  b.b2 = Tensor<T>::zeros({dim});
  return b;
}

template <typename T>
SwinStageP<Tensor<T>> make_swin_stage(int dim, int depth, Rng& rng) {
  if (depth % 2 != 0) throw std::invalid_argument("stage depth must be even (W/SW pairs)");
  SwinStageP<Tensor<T>> st;
  for (int i = 0; i < depth; ++i) st.blocks.push_back(make_swin_block<T>(dim, rng));
  return st;
}

template <typename T>
SwinUnetP<Tensor<T>> make_swin_unet(const SwinUnetPlan<T>& g, const std::vector<int>& depths,
                                    int bottleneck_depth, Rng& rng) {
  if (int(depths.size()) != g.levels) throw std::invalid_argument("depths/levels mismatch");
  SwinUnetP<Tensor<T>> u;
  const int pv = g.c_in * g.patch * g.patch;
  u.embed_w = uniform_fanin<T>({pv, g.base_dim}, pv, rng);
  u.embed_b = Tensor<T>::zeros({g.base_dim});
  int d = g.base_dim;
  for (int l = 0; l < g.levels; ++l) {
    u.enc.push_back(make_swin_stage<T>(d, depths[size_t(l)], rng));
    u.merge_w.push_back(uniform_fanin<T>({4 * d, 2 * d}, 4 * d, rng));
    u.merge_b.push_back(Tensor<T>::zeros({2 * d}));
    u.expand_w.push_back(uniform_fanin<T>({2 * d, 4 * d}, 2 * d, rng));
    u.expand_b.push_back(Tensor<T>::zeros({4 * d}));
    u.fuse_w.push_back(uniform_fanin<T>({2 * d, d}, 2 * d, rng));
    u.fuse_b.push_back(Tensor<T>::zeros({d}));
    u.dec.push_back(make_swin_stage<T>(d, depths[size_t(l)], rng));
    d *= 2;
  }
  u.bottleneck = make_swin_stage<T>(d, bottleneck_depth, rng);
  const int p2 = g.patch * g.patch;
  u.final_expand_w = uniform_fanin<T>({g.base_dim, p2 * g.base_dim}, g.base_dim, rng);
  u.final_expand_b = Tensor<T>::zeros({p2 * g.base_dim});
  u.head_w = uniform_fanin<T>({g.base_dim, g.c_out}, g.base_dim, rng);
  u.head_b = Tensor<T>::zeros({g.c_out});
  return u;
}

// ---- forward ---------------------------------------------------------

// Non-overlapping patch embedding: [c,h,w] -> (h/p)*(w/p) tokens.
template <typename T>
TokenGrid patchify(Tape<T>& t, Var img, int patch, Var embed_w, Var embed_b) {
  const Shape& s = t.shape(img);
  if (s.size() != 3) throw std::invalid_argument("patchify: want [c,h,w]");
  const int c = s[0], h = s[1], w = s[2];
  if (h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("patchify: image not divisible by patch size");
  }
  const int rows = h / patch, cols = w / patch;
  Var x = t.gather(img, winidx::patchify(c, h, w, patch), {rows * cols, c * patch * patch});
  x = affine(t, x, embed_w, embed_b);
  return TokenGrid{rows, cols, t.shape(x)[1], x};
}

// Grid tokens regrouped as [num_windows * M*M, dim], (window, position)
// ordered; window_reverse restores the grid bit-exactly.
template <typename T>
Var window_partition(Tape<T>& t, const TokenGrid& g, int m) {
  if (g.rows % m != 0 || g.cols % m != 0) {
    throw std::invalid_argument("window_partition: grid not divisible by window");
  }
  const int nw = (g.rows / m) * (g.cols / m);
  return t.gather(g.tokens, winidx::window_partition(g.rows, g.cols, m, g.dim),
                  {nw * m * m, g.dim});
}

template <typename T>
TokenGrid window_reverse(Tape<T>& t, Var windows, int rows, int cols, int m, int dim) {
  Var x = t.gather(windows, winidx::invert(winidx::window_partition(rows, cols, m, dim)),
                   {rows * cols, dim});
  return TokenGrid{rows, cols, dim, x};
}

// Torus roll by (-s, -s); cyclic_shift(g, rows - s) inverts it.
template <typename T>
TokenGrid cyclic_shift(Tape<T>& t, const TokenGrid& g, int s) {
  const int sr = ((s % g.rows) + g.rows) % g.rows;
  Var x = t.gather(g.tokens, winidx::cyclic_shift(g.rows, g.cols, sr, g.dim),
                   t.shape(g.tokens));
  return TokenGrid{g.rows, g.cols, g.dim, x};
}

// 2x2 token groups concatenated and reduced: halves rows/cols.
template <typename T>
TokenGrid patch_merging(Tape<T>& t, const TokenGrid& g, Var reduce_w, Var reduce_b) {
  if (g.rows % 2 != 0 || g.cols % 2 != 0) {
    throw std::invalid_argument("patch_merging: grid dimensions must be even");
  }
  Var x = t.gather(g.tokens, winidx::merge_groups(g.rows, g.cols, g.dim),
                   {g.rows / 2 * (g.cols / 2), 4 * g.dim});
  x = affine(t, x, reduce_w, reduce_b);
  return TokenGrid{g.rows / 2, g.cols / 2, t.shape(x)[1], x};
}

// dim -> 2*dim affine, then regrouped so rows/cols double and each
// token carries dim/2 channels.
template <typename T>
TokenGrid patch_expanding(Tape<T>& t, const TokenGrid& g, Var expand_w, Var expand_b) {
  Var x = affine(t, g.tokens, expand_w, expand_b);
  const int d2 = t.shape(x)[1];
  if (d2 % 4 != 0) throw std::invalid_argument("patch_expanding: expanded dim not divisible by 4");
  x = t.gather(x, winidx::expand_groups(g.rows, g.cols, d2), {4 * g.rows * g.cols, d2 / 4});
  return TokenGrid{2 * g.rows, 2 * g.cols, d2 / 4, x};
}

inline double attn_scale(int head_dim) { return 1.0 / std::sqrt(double(head_dim)); }

// Window (or shifted-window) multi-head self-attention over a token
// grid. softmax(Q K^T / sqrt(d_q) + mask) V per window and head, heads
// re-merged, output projection applied.
template <typename T>
Var window_mhsa(Tape<T>& t, Var tokens, const SwinBlockP<Var>& p, const StagePlan<T>& g,
                bool shifted) {
  const int m2 = g.window * g.window;
  const int nw = g.num_windows();
  const int hd = g.dim / g.heads;
  Var x = tokens;
  const bool do_shift = shifted && g.shift > 0;
  if (do_shift) x = t.gather(x, g.shift_fwd, t.shape(x));
  x = t.gather(x, g.win_gather, {nw * m2, g.dim});
  Var q = t.matmul(x, p.wq);
  Var k = t.matmul(x, p.wk);
  Var v = t.matmul(x, p.wv);
  q = t.gather(q, g.head_split, {nw * g.heads, m2, hd});
  k = t.gather(k, g.head_split, {nw * g.heads, m2, hd});
  v = t.gather(v, g.head_split, {nw * g.heads, m2, hd});
  Var att = t.scale(t.bmm_nt(q, k), attn_scale(hd));
  if (do_shift) att = t.const_add(att, g.attn_mask);
  att = t.softmax_lastdim(att);
  Var o = t.bmm(att, v);
  o = t.gather(o, g.head_merge, {nw * m2, g.dim});
  o = affine(t, o, p.wo, p.bo);
  o = t.gather(o, g.win_scatter, {g.rows * g.cols, g.dim});
  if (do_shift) o = t.gather(o, g.shift_bwd, t.shape(o));
  return o;
}

inline constexpr double kLnEps = 1e-5;

// One transformer block: x + MSA(LN(x)), then x + MLP(LN(x)).
template <typename T>
Var swin_block(Tape<T>& t, Var x, const SwinBlockP<Var>& p, const StagePlan<T>& g,
               bool shifted) {
  Var a = window_mhsa(t, t.layer_norm(x, p.ln1_g, p.ln1_b, kLnEps), p, g, shifted);
  x = t.add(x, a);
  Var h = t.layer_norm(x, p.ln2_g, p.ln2_b, kLnEps);
  Var m = affine(t, t.gelu(affine(t, h, p.w1, p.b1)), p.w2, p.b2);
  return t.add(x, m);
}

// W-MSA block followed by its SW-MSA twin (one "x2" unit).
template <typename T>
Var swin_block_pair(Tape<T>& t, Var x, const SwinBlockP<Var>& p1, const SwinBlockP<Var>& p2,
                    const StagePlan<T>& g) {
  x = swin_block(t, x, p1, g, false);
  return swin_block(t, x, p2, g, true);
}

template <typename T>
Var run_stage(Tape<T>& t, Var x, const SwinStageP<Var>& st, const StagePlan<T>& g) {
  for (size_t i = 0; i < st.blocks.size(); ++i) {
    x = swin_block(t, x, st.blocks[i], g, i % 2 == 1);
  }
  return x;
}

// Per-level positional tokens; entry l (if set) is added on entry to
// resolution level l. Default use injects only level 0.
using LevelPos = std::vector<std::optional<Var>>;

// Encoder / bottleneck / decoder with skip fusion, back to pixels.
// input [c_in,h,w] -> output [c_out,h,w].
template <typename T>
Var swin_unet_forward(Tape<T>& t, Var img, const SwinUnetP<Var>& p, const SwinUnetPlan<T>& g,
                      const LevelPos& pos = {}) {
  auto pos_at = [&](int level) -> std::optional<Var> {
    if (int(pos.size()) > level) return pos[size_t(level)];
    return std::nullopt;
  };
  Var x = t.gather(img, g.patch_gather, {g.tokens0(), g.c_in * g.patch * g.patch});
  x = affine(t, x, p.embed_w, p.embed_b);
  std::vector<Var> skips;
  for (int l = 0; l < g.levels; ++l) {
    if (auto e = pos_at(l)) x = t.add(x, *e);
    x = run_stage(t, x, p.enc[size_t(l)], g.enc[size_t(l)]);
    skips.push_back(x);
    const auto& eg = g.enc[size_t(l)];
    x = t.gather(x, g.merge_gather[size_t(l)], {eg.rows / 2 * (eg.cols / 2), 4 * eg.dim});
    x = affine(t, x, p.merge_w[size_t(l)], p.merge_b[size_t(l)]);
  }
  if (auto e = pos_at(g.levels)) x = t.add(x, *e);
  x = run_stage(t, x, p.bottleneck, g.bottleneck);
  for (int l = g.levels - 1; l >= 0; --l) {
    const auto& dg = g.dec[size_t(l)];
    x = affine(t, x, p.expand_w[size_t(l)], p.expand_b[size_t(l)]);  // [n, 4d_l]
    x = t.gather(x, g.expand_gather[size_t(l)], {dg.rows * dg.cols, dg.dim});
    x = t.concat_lastdim(x, skips[size_t(l)]);
    x = affine(t, x, p.fuse_w[size_t(l)], p.fuse_b[size_t(l)]);
    if (auto e = pos_at(l)) x = t.add(x, *e);
    x = run_stage(t, x, p.dec[size_t(l)], dg);
  }
  x = affine(t, x, p.final_expand_w, p.final_expand_b);
  x = t.gather(x, g.final_pixels, {g.h * g.w, g.base_dim});
  x = affine(t, x, p.head_w, p.head_b);
  return t.gather(x, g.channels_first, {g.c_out, g.h, g.w});
}

// Mirrors of the parameter structs with the same vector sizes; used to
// lift stored tensors onto a tape field by field.
template <class B, class A>
SwinBlockP<B> clone_structure(const SwinBlockP<A>&) {
  return {};
}

template <class B, class A>
SwinStageP<B> clone_structure(const SwinStageP<A>& s) {
  SwinStageP<B> o;
  o.blocks.resize(s.blocks.size());
  return o;
}

template <class B, class A>
SwinUnetP<B> clone_structure(const SwinUnetP<A>& s) {
  SwinUnetP<B> o;
  o.enc.resize(s.enc.size());
  for (size_t i = 0; i < s.enc.size(); ++i) o.enc[i] = clone_structure<B>(s.enc[i]);
  o.merge_w.resize(s.merge_w.size());
  o.merge_b.resize(s.merge_b.size());
  o.bottleneck = clone_structure<B>(s.bottleneck);
  o.expand_w.resize(s.expand_w.size());
  o.expand_b.resize(s.expand_b.size());
  o.fuse_w.resize(s.fuse_w.size());
  o.fuse_b.resize(s.fuse_b.size());
  o.dec.resize(s.dec.size());
  for (size_t i = 0; i < s.dec.size(); ++i) o.dec[i] = clone_structure<B>(s.dec[i]);
  return o;
}

// Registers every stored tensor on the tape (in visit order, which the
// optimizer and checkpoint writer share) and returns the Var mirror.
template <typename T, template <class> class P>
P<Var> lift_params(Tape<T>& t, P<Tensor<T>>& stored, const std::string& prefix) {
  P<Var> mirror = clone_structure<Var>(stored);
  std::vector<Var> vars;
  visit_params(stored, prefix,
               [&](const std::string& n, Tensor<T>& v) { vars.push_back(t.param(n, v)); });
  size_t i = 0;
  visit_params(mirror, prefix, [&](const std::string&, Var& v) { v = vars.at(i++); });
  return mirror;
}

}  // namespace mcstra
