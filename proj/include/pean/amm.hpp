#pragma once

#include "pean/nn.hpp"

namespace pean::amm {

struct AmmConfig {
  int c1 = 64;        // feature channels, constant across blocks
  int n_blocks = 6;
  int ffn_mult = 4;
  int gam_qk_dim = 256;  // merged-axis Q/K projection width
  int proj_kernel = 3;   // block input projection (Eq. 5-style conv)
};

// Cross-attention aligning the prior sequence with the spatial feature:
// flattened spatial positions query key/value projections of P^e, the
// result is projected back and residual-added. Value and output
// projections start at zero, so the module is the identity at init.
template <class T>
struct Fam {
  nn::Linear<T> q, k, v, out;

  Fam() = default;
  Fam(Rng& rng, int c1, int prior_width)
      : q(rng, c1, c1),
        k(rng, prior_width, c1),
        v(rng, prior_width, c1, true, true),
        out(rng, c1, c1, true, true) {}

  // f_s [B,H,W,C1], p_e [B,L,A] row-stochastic -> [B,H,W,C1]
  Var<T> operator()(const Var<T>& f_s, const Var<T>& p_e) const {
    const int b = f_s.dim(0), h = f_s.dim(1), w = f_s.dim(2), c = f_s.dim(3);
    check(p_e.dim(0) == b, "fam: prior batch mismatch");
    Var<T> queries = q(f_s);              // [B,H,W,C1], tokens = spatial cells
    Var<T> keys = k(p_e);                 // [B,L,C1]
    Var<T> values = v(p_e);               // [B,L,C1]
    Var<T> att = strip_attention(queries, keys, values, b, h * w, p_e.dim(1), c, c,
                                 Shape{b, h, w, c});
    return add(f_s, out(att));
  }

  void collect(nn::Params<T>& ps, const std::string& p) const {
    q.collect(ps, p + ".q");
    k.collect(ps, p + ".k");
    v.collect(ps, p + ".v");
    out.collect(ps, p + ".out");
  }
};

// Shared shape of both attention modules: two strip branches, channel
// concat + fusion conv (Eq. 6), then a residual FFN (Eq. 7). Fusion conv
// and FFN output start at zero, making the module the identity at init.
template <class T>
struct StripBranch {
  nn::Linear<T> q, k, v, out;

  StripBranch() = default;
  StripBranch(Rng& rng, int c) : q(rng, c, c), k(rng, c, c), v(rng, c, c), out(rng, c, c, true, true) {}
  void collect(nn::Params<T>& ps, const std::string& p) const {
    q.collect(ps, p + ".q");
    k.collect(ps, p + ".k");
    v.collect(ps, p + ".v");
    out.collect(ps, p + ".out");
  }
};

// Local Attention Module. Horizontal branch: self-attention along the W
// positions within each row; vertical branch: along H within each column.
template <class T>
struct Lam {
  StripBranch<T> horiz, vert;
  nn::Conv2d<T> fuse;
  nn::Ffn<T> ffn;

  Lam() = default;
  Lam(Rng& rng, const AmmConfig& cfg)
      : horiz(rng, cfg.c1),
        vert(rng, cfg.c1),
        fuse(rng, 2 * cfg.c1, cfg.c1, 1, true),
        ffn(rng, cfg.c1, cfg.ffn_mult * cfg.c1) {}

  Var<T> horizontal(const Var<T>& x) const {
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Var<T> att = strip_attention(horiz.q(x), horiz.k(x), horiz.v(x), b * h, w, w, c, c,
                                 Shape{b, h, w, c});
    return horiz.out(att);
  }
  Var<T> vertical(const Var<T>& x) const {
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Var<T> xp = permute_hw(x);  // [B,W,H,C]
    Var<T> att = strip_attention(vert.q(xp), vert.k(xp), vert.v(xp), b * w, h, h, c, c,
                                 Shape{b, w, h, c});
    return permute_hw(vert.out(att));
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> glo = add(x, fuse(concat_last(horizontal(x), vertical(x))));
    return add(glo, ffn(glo));
  }

  void collect(nn::Params<T>& ps, const std::string& p) const {
    horiz.collect(ps, p + ".h");
    vert.collect(ps, p + ".v");
    fuse.collect(ps, p + ".fuse");
    ffn.collect(ps, p + ".ffn");
  }
};

// Global Attention Module: width (resp. height) merged into the channel
// dimension, attention over the H (resp. W) tokens at full merged width
// with Q/K projected to gam_qk_dim; V is the merged token itself.
template <class T>
struct Gam {
  nn::Linear<T> qh, kh, qv, kv;
  nn::Conv2d<T> fuse;
  nn::Ffn<T> ffn;
  int h_tokens_dim = 0, v_tokens_dim = 0;

  Gam() = default;
  Gam(Rng& rng, const AmmConfig& cfg, int h, int w)
      : qh(rng, cfg.c1 * w, cfg.gam_qk_dim),
        kh(rng, cfg.c1 * w, cfg.gam_qk_dim),
        qv(rng, cfg.c1 * h, cfg.gam_qk_dim),
        kv(rng, cfg.c1 * h, cfg.gam_qk_dim),
        fuse(rng, 2 * cfg.c1, cfg.c1, 1, true),
        ffn(rng, cfg.c1, cfg.ffn_mult * cfg.c1),
        h_tokens_dim(cfg.c1 * w),
        v_tokens_dim(cfg.c1 * h) {}

  Var<T> merged_h(const Var<T>& x) const {  // tokens [B,H,W*C]
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    check(w * c == h_tokens_dim, "gam: feature extents do not match construction");
    Var<T> tok = reshape(x, {b, h, w * c});
    Var<T> att = strip_attention(qh(tok), kh(tok), tok, b, h, h, qh.w.dim(1), w * c,
                                 Shape{b, h, w, c});
    return att;
  }
  Var<T> merged_v(const Var<T>& x) const {  // tokens [B,W,H*C]
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    check(h * c == v_tokens_dim, "gam: feature extents do not match construction");
    Var<T> xp = permute_hw(x);
    Var<T> tok = reshape(xp, {b, w, h * c});
    Var<T> att = strip_attention(qv(tok), kv(tok), tok, b, w, w, qv.w.dim(1), h * c,
                                 Shape{b, w, h, c});
    return permute_hw(att);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> o = add(x, fuse(concat_last(merged_h(x), merged_v(x))));
    return add(o, ffn(o));
  }

  void collect(nn::Params<T>& ps, const std::string& p) const {
    qh.collect(ps, p + ".qh");
    kh.collect(ps, p + ".kh");
    qv.collect(ps, p + ".qv");
    kv.collect(ps, p + ".kv");
    fuse.collect(ps, p + ".fuse");
    ffn.collect(ps, p + ".ffn");
  }
};

// One AMM block: input projection (Eq. 5) -> LAM -> GAM.
template <class T>
struct AmmBlock {
  nn::Conv2d<T> proj;
  Lam<T> lam;
  Gam<T> gam;

  AmmBlock() = default;
  AmmBlock(Rng& rng, const AmmConfig& cfg, int h, int w)
      : proj(rng, 2 * cfg.c1, cfg.c1, cfg.proj_kernel), lam(rng, cfg), gam(rng, cfg, h, w) {}

  // Returns (output, post-LAM tap, post-GAM tap).
  Var<T> operator()(const Var<T>& f_prev, const Var<T>& f_a, Tensor<T>* tap_lam = nullptr,
                    Tensor<T>* tap_gam = nullptr) const {
    Var<T> f_loc = proj(concat_last(f_prev, f_a));
    Var<T> after_lam = lam(f_loc);
    if (tap_lam) *tap_lam = after_lam.detach();
    Var<T> out = gam(after_lam);
    if (tap_gam) *tap_gam = out.detach();
    return out;
  }

  void collect(nn::Params<T>& ps, const std::string& p) const {
    proj.collect(ps, p + ".proj");
    lam.collect(ps, p + ".lam");
    gam.collect(ps, p + ".gam");
  }
};

// Runs the block stack; F_prev starts at F^a. Appends two taps per block
// (post-LAM, post-GAM) when `taps` is given.
template <class T>
Var<T> amm_forward(const Var<T>& f_a, const std::vector<AmmBlock<T>>& blocks,
                   std::vector<Tensor<T>>* taps = nullptr) {
  check(!blocks.empty(), "amm_forward: no blocks");
  Var<T> f = f_a;
  for (const AmmBlock<T>& blk : blocks) {
    Tensor<T> tl, tg;
    f = blk(f, f_a, taps ? &tl : nullptr, taps ? &tg : nullptr);
    if (taps) {
      taps->push_back(std::move(tl));
      taps->push_back(std::move(tg));
    }
  }
  return f;
}

}  // namespace pean::amm
