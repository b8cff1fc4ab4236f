#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pean/amm.hpp"
#include "pean/gradcheck.hpp"

using namespace pean;
using namespace pean::amm;

namespace {

AmmConfig small_cfg() {
  AmmConfig cfg;
  cfg.c1 = 8;
  cfg.n_blocks = 2;
  cfg.ffn_mult = 2;
  cfg.gam_qk_dim = 6;
  cfg.proj_kernel = 3;
  return cfg;
}

// Full attention over all H*W tokens with a strip mask: pairs in different
// strips get -inf scores. Reproduces each LAM branch (before the output
// projection) when the mask groups rows (axis=0) or columns (axis=1).
Tensor<double> masked_full_attention(const Tensor<double>& q, const Tensor<double>& k,
                                     const Tensor<double>& v, int h, int w, int axis) {
  const int c = q.dim(3);
  const int n = h * w;
  auto strip_of = [&](int token) {
    const int y = token / w, x = token % w;
    return axis == 0 ? y : x;
  };
  Tensor<double> out(q.shape());
  for (int b = 0; b < q.dim(0); ++b) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> score(static_cast<size_t>(n), -1e300);
      double m = -1e300;
      for (int j = 0; j < n; ++j) {
        if (strip_of(j) != strip_of(i)) continue;
        double s = 0;
        for (int a = 0; a < c; ++a)
          s += q.at(b, i / w, i % w, a) * k.at(b, j / w, j % w, a);
        score[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(c));
        m = std::max(m, score[static_cast<size_t>(j)]);
      }
      double z = 0;
      for (int j = 0; j < n; ++j) {
        if (strip_of(j) != strip_of(i)) continue;
        score[static_cast<size_t>(j)] = std::exp(score[static_cast<size_t>(j)] - m);
        z += score[static_cast<size_t>(j)];
      }
      for (int j = 0; j < n; ++j) {
        if (strip_of(j) != strip_of(i)) continue;
        for (int a = 0; a < c; ++a)
          out.at(b, i / w, i % w, a) +=
              score[static_cast<size_t>(j)] / z * v.at(b, j / w, j % w, a);
      }
    }
  }
  return out;
}

// naive merged-axis attention oracle for GAM's horizontal branch
Tensor<double> merged_h_oracle(const Tensor<double>& x, const Tensor<double>& wq,
                               const Tensor<double>& bq, const Tensor<double>& wk,
                               const Tensor<double>& bk) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int d = wq.dim(1), wc = w * c;
  Tensor<double> out(x.shape());
  for (int ib = 0; ib < b; ++ib) {
    // tokens: h rows of length w*c
    std::vector<std::vector<double>> tok(static_cast<size_t>(h),
                                         std::vector<double>(static_cast<size_t>(wc)));
    for (int y = 0; y < h; ++y)
      for (int xw = 0; xw < w; ++xw)
        for (int a = 0; a < c; ++a)
          tok[static_cast<size_t>(y)][static_cast<size_t>(xw * c + a)] = x.at(ib, y, xw, a);
    auto project = [&](const std::vector<double>& t, const Tensor<double>& wm,
                       const Tensor<double>& bm) {
      std::vector<double> p(static_cast<size_t>(d));
      for (int o = 0; o < d; ++o) {
        double s = bm[o];
        for (int i = 0; i < wc; ++i) s += t[static_cast<size_t>(i)] * wm.at(i, o);
        p[static_cast<size_t>(o)] = s;
      }
      return p;
    };
    for (int i = 0; i < h; ++i) {
      const auto qi = project(tok[static_cast<size_t>(i)], wq, bq);
      std::vector<double> score(static_cast<size_t>(h));
      double m = -1e300;
      for (int j = 0; j < h; ++j) {
        const auto kj = project(tok[static_cast<size_t>(j)], wk, bk);
        double s = 0;
        for (int a = 0; a < d; ++a) s += qi[static_cast<size_t>(a)] * kj[static_cast<size_t>(a)];
        score[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(d));
        m = std::max(m, score[static_cast<size_t>(j)]);
      }
      double z = 0;
      for (double& s : score) {
        s = std::exp(s - m);
        z += s;
      }
      for (int j = 0; j < h; ++j)
        for (int i2 = 0; i2 < wc; ++i2) {
          out.at(ib, i, i2 / c, i2 % c) +=
              score[static_cast<size_t>(j)] / z * tok[static_cast<size_t>(j)][static_cast<size_t>(i2)];
        }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("FAM keeps shape and is the identity at init") {
  Rng rng(1);
  Fam<double> fam(rng, 8, 37);
  Var<double> f_s(rng.normal_tensor<double>({2, 4, 6, 8}));
  Var<double> p_e(softmax_lastdim(Var<double>(rng.normal_tensor<double>({2, 26, 37}))).detach());
  Var<double> f_a = fam(f_s, p_e);
  CHECK(f_a.shape() == f_s.shape());
  // zero-initialized value/output projections: F^a == F^s exactly
  CHECK(max_abs_diff(f_a.val(), f_s.val()) == 0.0);
}

TEST_CASE("FAM is batch-permutation equivariant") {
  Rng rng(2);
  Fam<double> fam(rng, 8, 37);
  // make it non-trivial
  fam.v = nn::Linear<double>(rng, 37, 8);
  fam.out = nn::Linear<double>(rng, 8, 8);
  Tensor<double> fs = rng.normal_tensor<double>({3, 4, 6, 8});
  Tensor<double> pe = softmax_lastdim(Var<double>(rng.normal_tensor<double>({3, 26, 37}))).detach();
  Tensor<double> out = fam(Var<double>(fs), Var<double>(pe)).detach();
  // permute batch as (2,0,1)
  auto permute_batch = [](const Tensor<double>& t) {
    Tensor<double> p(t.shape());
    const int64_t item = t.numel() / t.dim(0);
    const int src[3] = {2, 0, 1};
    for (int b = 0; b < 3; ++b)
      std::copy_n(t.data() + src[b] * item, item, p.data() + static_cast<int64_t>(b) * item);
    return p;
  };
  Tensor<double> out_p = fam(Var<double>(permute_batch(fs)), Var<double>(permute_batch(pe))).detach();
  CHECK(max_abs_diff(out_p, permute_batch(out)) < 1e-12);
}

TEST_CASE("LAM and GAM are identity maps at initialization") {
  Rng rng(3);
  AmmConfig cfg = small_cfg();
  Lam<double> lam(rng, cfg);
  Gam<double> gam(rng, cfg, 4, 6);
  Var<double> x(rng.normal_tensor<double>({2, 4, 6, 8}));
  CHECK(max_abs_diff(lam(x).val(), x.val()) == 0.0);
  CHECK(max_abs_diff(gam(x).val(), x.val()) == 0.0);
}

TEST_CASE("LAM horizontal branch with H=1 is full attention over W tokens") {
  Rng rng(4);
  AmmConfig cfg = small_cfg();
  Lam<double> lam(rng, cfg);
  lam.horiz.out = nn::Linear<double>(rng, 8, 8);  // non-zero to exercise the path
  Var<double> x(rng.normal_tensor<double>({1, 1, 6, 8}));
  Tensor<double> got = lam.horizontal(x).detach();
  // same computation through the generic attention op
  Var<double> tok = reshape(x, {6, 8});
  Var<double> att = attention(lam.horiz.q(tok), lam.horiz.k(tok), lam.horiz.v(tok));
  Tensor<double> want = lam.horiz.out(att).detach().reshaped({1, 1, 6, 8});
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("LAM horizontal branch is row-local") {
  Rng rng(5);
  AmmConfig cfg = small_cfg();
  Lam<double> lam(rng, cfg);
  lam.horiz.out = nn::Linear<double>(rng, 8, 8);
  Tensor<double> x = rng.normal_tensor<double>({1, 4, 6, 8});
  Tensor<double> base = lam.horizontal(Var<double>(x)).detach();
  Tensor<double> zeroed = x;
  const int row = 2;
  for (int xw = 0; xw < 6; ++xw)
    for (int a = 0; a < 8; ++a) zeroed.at(0, row, xw, a) = 0.0;
  Tensor<double> changed = lam.horizontal(Var<double>(zeroed)).detach();
  for (int y = 0; y < 4; ++y) {
    double diff = 0;
    for (int xw = 0; xw < 6; ++xw)
      for (int a = 0; a < 8; ++a) diff = std::max(diff, std::abs(changed.at(0, y, xw, a) - base.at(0, y, xw, a)));
    if (y == row) CHECK(diff > 0.0);
    else CHECK(diff == 0.0);
  }
}

TEST_CASE("strip attention equals masked full attention on both axes") {
  Rng rng(6);
  AmmConfig cfg = small_cfg();
  for (int rep = 0; rep < 10; ++rep) {
    Lam<double> lam(rng, cfg);
    Tensor<double> x = rng.normal_tensor<double>({1, 4, 6, 8});
    Var<double> xv(x);
    // horizontal: attention along W within each row -> mask groups by row
    Tensor<double> got_h = strip_attention(lam.horiz.q(xv), lam.horiz.k(xv), lam.horiz.v(xv),
                                           1 * 4, 6, 6, 8, 8, Shape{1, 4, 6, 8})
                               .detach();
    Tensor<double> want_h =
        masked_full_attention(lam.horiz.q(xv).detach(), lam.horiz.k(xv).detach(),
                              lam.horiz.v(xv).detach(), 4, 6, /*axis=*/0);
    CHECK(max_abs_diff(got_h, want_h) < 1e-5);

    // vertical: attention along H within each column -> mask groups by column
    Var<double> xp = permute_hw(xv);
    Tensor<double> got_v_p = strip_attention(lam.vert.q(xp), lam.vert.k(xp), lam.vert.v(xp),
                                             1 * 6, 4, 4, 8, 8, Shape{1, 6, 4, 8})
                                 .detach();
    Tensor<double> got_v = permute_hw(Var<double>(got_v_p)).detach();
    Tensor<double> want_v =
        masked_full_attention(permute_hw(lam.vert.q(xv)).detach(),
                              permute_hw(lam.vert.k(xv)).detach(),
                              permute_hw(lam.vert.v(xv)).detach(), 4, 6, /*axis=*/1);
    CHECK(max_abs_diff(got_v, want_v) < 1e-5);
  }
}

TEST_CASE("GAM keeps shape; H=1 merged branch returns the lone token") {
  Rng rng(7);
  AmmConfig cfg = small_cfg();
  Gam<double> gam1(rng, cfg, 1, 6);
  Var<double> x1(rng.normal_tensor<double>({2, 1, 6, 8}));
  // single token: softmax over one key is 1, V is the token itself
  CHECK(max_abs_diff(gam1.merged_h(x1).detach(), x1.val()) < 1e-12);
  Gam<double> gam(rng, cfg, 4, 6);
  Var<double> x(rng.normal_tensor<double>({2, 4, 6, 8}));
  CHECK(gam(x).shape() == Shape{2, 4, 6, 8});
}

TEST_CASE("GAM merged attention equals the naive reshape oracle") {
  Rng rng(8);
  AmmConfig cfg = small_cfg();
  for (int rep = 0; rep < 5; ++rep) {
    Gam<double> gam(rng, cfg, 4, 6);
    Tensor<double> x = rng.normal_tensor<double>({2, 4, 6, 8});
    Tensor<double> got = gam.merged_h(Var<double>(x)).detach();
    Tensor<double> want = merged_h_oracle(x, gam.qh.w.val(), gam.qh.b.val(), gam.kh.w.val(),
                                          gam.kh.b.val());
    CHECK(max_abs_diff(got, want) < 1e-5);
  }
}

TEST_CASE("amm_forward composition, taps and base case") {
  Rng rng(9);
  AmmConfig cfg = small_cfg();
  cfg.n_blocks = 1;
  std::vector<AmmBlock<double>> one;
  one.emplace_back(rng, cfg, 4, 6);
  Var<double> f_a(rng.normal_tensor<double>({1, 4, 6, 8}));
  std::vector<Tensor<double>> taps;
  Tensor<double> via_stack = amm_forward(f_a, one, &taps).detach();
  Tensor<double> manual = one[0](f_a, f_a).detach();
  CHECK(max_abs_diff(via_stack, manual) == 0.0);
  CHECK(taps.size() == 2);

  cfg.n_blocks = 3;
  std::vector<AmmBlock<double>> three;
  for (int i = 0; i < 3; ++i) three.emplace_back(rng, cfg, 4, 6);
  taps.clear();
  (void)amm_forward(f_a, three, &taps);
  CHECK(taps.size() == 6);
}

TEST_CASE("gradients flow through a full AMM block") {
  Rng rng(10);
  AmmConfig cfg;
  cfg.c1 = 4;
  cfg.ffn_mult = 2;
  cfg.gam_qk_dim = 3;
  cfg.n_blocks = 2;
  std::vector<AmmBlock<double>> blocks;
  for (int i = 0; i < 2; ++i) blocks.emplace_back(rng, cfg, 3, 4);
  // break the zero-init so every parameter participates
  nn::Params<double> ps;
  for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(ps, "b" + std::to_string(i));
  Rng jitter(11);
  for (auto& [_, p] : ps.learnable)
    for (int64_t i = 0; i < p.numel(); ++i) p.val()[i] += jitter.normal(0, 0.05);
  Var<double> f_a(rng.normal_tensor<double>({1, 3, 4, 4}));
  auto rep = grad_check([&] { return mean_all(square(amm_forward(f_a, blocks))); }, ps, 1e-5,
                        1e-4, /*max_coords_per_param=*/4);
  CHECK(rep.passed);
}
