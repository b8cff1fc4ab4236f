#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pean/gradcheck.hpp"

using namespace pean;

namespace {

// Naive three-loop attention oracle, independent of the op implementation.
Tensor<double> attention_oracle(const Tensor<double>& q, const Tensor<double>& k,
                                const Tensor<double>& v) {
  const int nq = q.dim(0), nk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  Tensor<double> out(Shape{nq, dv});
  for (int i = 0; i < nq; ++i) {
    std::vector<double> scores(static_cast<size_t>(nk), 0.0);
    for (int j = 0; j < nk; ++j) {
      double s = 0;
      for (int a = 0; a < d; ++a) s += q.at(i, a) * k.at(j, a);
      scores[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(d));
    }
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    double z = 0;
    for (double& s : scores) {
      s = std::exp(s - m);
      z += s;
    }
    for (int j = 0; j < nk; ++j)
      for (int a = 0; a < dv; ++a) out.at(i, a) += scores[static_cast<size_t>(j)] / z * v.at(j, a);
  }
  return out;
}

}  // namespace

TEST_CASE("pixel_shuffle follows the fixed index convention") {
  Var<double> x(Tensor<double>(Shape{1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0}));
  Var<double> y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 2, 2, 1});
  CHECK(y.val().at(0, 0, 0, 0) == 1.0);
  CHECK(y.val().at(0, 0, 1, 0) == 2.0);
  CHECK(y.val().at(0, 1, 0, 0) == 3.0);
  CHECK(y.val().at(0, 1, 1, 0) == 4.0);
}

TEST_CASE("pixel_shuffle with r=1 is the identity") {
  Rng rng(1);
  Var<double> x(rng.normal_tensor<double>({2, 3, 5, 4}));
  Var<double> y = pixel_shuffle(x, 1);
  CHECK(max_abs_diff(x.val(), y.val()) == 0.0);
}

TEST_CASE("pixel_unshuffle inverts pixel_shuffle exactly") {
  Rng rng(2);
  for (Shape s : {Shape{1, 3, 5, 8}, Shape{2, 2, 2, 4}, Shape{1, 4, 4, 9}}) {
    const int r = s.back() == 9 ? 3 : 2;
    Var<double> x(rng.normal_tensor<double>(s));
    Var<double> y = pixel_unshuffle(pixel_shuffle(x, r), r);
    CHECK(max_abs_diff(x.val(), y.val()) == 0.0);
  }
}

TEST_CASE("pixel_shuffle rejects channel counts not divisible by r^2") {
  Var<double> x(Tensor<double>::zeros({1, 2, 2, 6}));
  CHECK_THROWS_AS(pixel_shuffle(x, 2), Error);
}

TEST_CASE("mish and swish scalar values") {
  auto eval1 = [](auto f, double v) {
    Var<double> x(Tensor<double>::scalar(v));
    return f(x).item();
  };
  auto do_mish = [](const Var<double>& x) { return mish(x); };
  auto do_swish = [](const Var<double>& x) { return swish(x); };
  CHECK(eval1(do_mish, 0.0) == 0.0);
  CHECK(eval1(do_swish, 0.0) == 0.0);
  CHECK(std::abs(eval1(do_mish, 20.0) - 20.0) < 1e-6);
  CHECK(std::abs(eval1(do_mish, -20.0)) < 1e-6);
  // stable softplus keeps extreme inputs finite
  CHECK(is_finite(eval1(do_mish, 500.0)));
  CHECK(is_finite(eval1(do_mish, -500.0)));
}

TEST_CASE("attention: single token returns V's row") {
  Rng rng(3);
  Var<double> q(rng.normal_tensor<double>({1, 4}));
  Var<double> k(rng.normal_tensor<double>({1, 4}));
  Var<double> v(rng.normal_tensor<double>({1, 6}));
  Var<double> out = attention(q, k, v);
  CHECK(max_abs_diff(out.val(), v.val()) < 1e-12);
}

TEST_CASE("attention: identical keys average V uniformly") {
  Rng rng(4);
  Tensor<double> krow = rng.normal_tensor<double>({1, 3});
  Tensor<double> k(Shape{5, 3});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) k.at(i, j) = krow.at(0, j);
  Var<double> q(rng.normal_tensor<double>({2, 3}));
  Var<double> v(rng.normal_tensor<double>({5, 4}));
  Var<double> out = attention(q, Var<double>(k), v);
  for (int i = 0; i < 2; ++i)
    for (int a = 0; a < 4; ++a) {
      double mean = 0;
      for (int j = 0; j < 5; ++j) mean += v.val().at(j, a) / 5.0;
      CHECK(std::abs(out.val().at(i, a) - mean) < 1e-12);
    }
}

TEST_CASE("attention matches the naive oracle on random instances") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Var<double> q(rng.normal_tensor<double>({4, 3}));
    Var<double> k(rng.normal_tensor<double>({4, 3}));
    Var<double> v(rng.normal_tensor<double>({4, 3}));
    Var<double> out = attention(q, k, v);
    CHECK(max_abs_diff(out.val(), attention_oracle(q.val(), k.val(), v.val())) < 1e-6);
  }
}

TEST_CASE("attention outputs stay in the convex hull of V rows") {
  Rng rng(6);
  Var<double> q(rng.normal_tensor<double>({7, 5}));
  Var<double> k(rng.normal_tensor<double>({9, 5}));
  Var<double> v(rng.normal_tensor<double>({9, 4}));
  Var<double> out = attention(q, k, v);
  for (int a = 0; a < 4; ++a) {
    double lo = v.val().at(0, a), hi = lo;
    for (int j = 1; j < 9; ++j) {
      lo = std::min(lo, v.val().at(j, a));
      hi = std::max(hi, v.val().at(j, a));
    }
    for (int i = 0; i < 7; ++i) {
      CHECK(out.val().at(i, a) >= lo - 1e-12);
      CHECK(out.val().at(i, a) <= hi + 1e-12);
    }
  }
  CHECK_THROWS_AS(attention(q, Var<double>(Tensor<double>::zeros({9, 4})), v), Error);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  Var<double> x(rng.normal_tensor<double>({6, 11}, 0, 4));
  Var<double> y = softmax_lastdim(x);
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 11; ++j) s += y.val().at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("grad_check: analytic x^2 derivative") {
  Var<double> x(Tensor<double>::scalar(3.0), true);
  nn::Params<double> ps;
  ps.add("x", x);
  auto rep = grad_check([&] { return mul(x, x); }, ps, 1e-6, 1e-8);
  CHECK(rep.passed);
  CHECK(std::abs(x.grad()[0] - 6.0) < 1e-9);
}

TEST_CASE("grad_check: mean(mish(Wx))") {
  Rng rng(8);
  Var<double> w(rng.normal_tensor<double>({4, 4}), true);
  Var<double> x(rng.normal_tensor<double>({4, 4}));
  nn::Params<double> ps;
  ps.add("w", w);
  auto rep = grad_check([&] { return mean_all(mish(matmul(x, w))); }, ps);
  CHECK(rep.passed);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("grad_check aborts on non-finite loss") {
  Var<double> x(Tensor<double>::scalar(1.0), true);
  nn::Params<double> ps;
  ps.add("x", x);
  CHECK_THROWS_AS(
      grad_check([&] { return Var<double>(Tensor<double>::scalar(std::nan(""))); }, ps), Error);
}

TEST_CASE("gradients of the standard layer set pass finite differences") {
  Rng rng(9);

  SUBCASE("affine") {
    nn::Linear<double> lin(rng, 5, 3);
    Var<double> x(rng.normal_tensor<double>({4, 5}));
    nn::Params<double> ps;
    lin.collect(ps, "lin");
    CHECK(grad_check([&] { return mean_all(square(lin(x))); }, ps).passed);
  }
  SUBCASE("conv2d") {
    nn::Conv2d<double> conv(rng, 3, 2, 3);
    Var<double> x(rng.normal_tensor<double>({2, 4, 5, 3}));
    nn::Params<double> ps;
    conv.collect(ps, "conv");
    CHECK(grad_check([&] { return mean_all(square(conv(x))); }, ps).passed);
  }
  SUBCASE("conv2d input gradient") {
    nn::Conv2d<double> conv(rng, 2, 2, 3);
    Var<double> x(rng.normal_tensor<double>({1, 4, 4, 2}), true);
    nn::Params<double> ps;
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(conv(x))); }, ps).passed);
  }
  SUBCASE("conv1d") {
    nn::Conv1d<double> conv(rng, 4, 3, 3);
    Var<double> x(rng.normal_tensor<double>({2, 4, 6}), true);
    nn::Params<double> ps;
    conv.collect(ps, "conv");
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(conv(x))); }, ps).passed);
  }
  SUBCASE("batch_norm training mode, last axis") {
    nn::BatchNorm<double> bn(3);
    Var<double> x(rng.normal_tensor<double>({4, 2, 2, 3}), true);
    nn::Params<double> ps;
    bn.collect(ps, "bn");
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(add_scalar(bn(x, true), 0.3))); }, ps).passed);
  }
  SUBCASE("batch_norm training mode, axis 1") {
    nn::BatchNorm<double> bn(5, 1);
    Var<double> x(rng.normal_tensor<double>({3, 5, 4}), true);
    nn::Params<double> ps;
    bn.collect(ps, "bn");
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(add_scalar(bn(x, true), 0.3))); }, ps).passed);
  }
  SUBCASE("batch_norm eval mode") {
    nn::BatchNorm<double> bn(3);
    bn.running_mean = rng.normal_tensor<double>({3});
    bn.running_var = rng.uniform_tensor<double>({3}, 0.5, 2.0);
    Var<double> x(rng.normal_tensor<double>({2, 2, 2, 3}), true);
    nn::Params<double> ps;
    bn.collect(ps, "bn");
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(bn(x, false))); }, ps).passed);
  }
  SUBCASE("layer_norm") {
    nn::LayerNorm<double> ln(6);
    Var<double> x(rng.normal_tensor<double>({5, 6}), true);
    nn::Params<double> ps;
    ln.collect(ps, "ln");
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(add_scalar(ln(x), 0.2))); }, ps).passed);
  }
  SUBCASE("softmax and log_softmax") {
    Var<double> x(rng.normal_tensor<double>({3, 7}), true);
    nn::Params<double> ps;
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(softmax_lastdim(x))); }, ps).passed);
    CHECK(grad_check([&] { return mean_all(square(log_softmax_lastdim(x))); }, ps).passed);
  }
  SUBCASE("pool, upsample, shuffle, permute") {
    Var<double> x(rng.normal_tensor<double>({2, 4, 6, 4}), true);
    nn::Params<double> ps;
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(avg_pool2d(x, 2, 2))); }, ps).passed);
    CHECK(grad_check([&] { return mean_all(square(adaptive_avg_pool_w(x, 5))); }, ps).passed);
    CHECK(grad_check([&] { return mean_all(square(collapse_mean_h(x))); }, ps).passed);
    CHECK(grad_check([&] { return mean_all(square(upsample2x_nearest(x))); }, ps).passed);
    CHECK(grad_check([&] { return mean_all(square(pixel_shuffle(x, 2))); }, ps).passed);
    CHECK(grad_check([&] { return mean_all(square(permute_hw(x))); }, ps).passed);
  }
  SUBCASE("attention") {
    Var<double> q(rng.normal_tensor<double>({3, 4}), true);
    Var<double> k(rng.normal_tensor<double>({5, 4}), true);
    Var<double> v(rng.normal_tensor<double>({5, 2}), true);
    nn::Params<double> ps;
    ps.add("q", q);
    ps.add("k", k);
    ps.add("v", v);
    CHECK(grad_check([&] { return mean_all(square(attention(q, k, v))); }, ps).passed);
  }
  SUBCASE("bidirectional LSTM") {
    nn::BiLstm<double> lstm(rng, 3, 2, 2);
    Var<double> x(rng.normal_tensor<double>({2, 4, 3}), true);
    nn::Params<double> ps;
    lstm.collect(ps, "lstm");
    ps.add("x", x);
    CHECK(grad_check([&] { return mean_all(square(lstm(x))); }, ps).passed);
  }
  SUBCASE("activations, concat, slice") {
    Var<double> x(rng.normal_tensor<double>({3, 4}), true);
    Var<double> y(rng.normal_tensor<double>({3, 4}), true);
    nn::Params<double> ps;
    ps.add("x", x);
    ps.add("y", y);
    auto f = [&] {
      Var<double> cat = concat_last(mish(x), swish(y));
      Var<double> s = slice_lastdim(cat, 2, 7);
      return mean_all(mul(s, sigmoid(s)));
    };
    CHECK(grad_check(f, ps).passed);
  }
}

TEST_CASE("batch_norm eval mode is a deterministic affine map") {
  Rng rng(10);
  nn::BatchNorm<float> bn(4);
  Var<float> warm(rng.normal_tensor<float>({8, 2, 2, 4}));
  (void)bn(warm, true);  // populate running stats
  Var<float> x(rng.normal_tensor<float>({3, 2, 2, 4}));
  Tensor<float> a = bn(x, false).detach();
  Tensor<float> b = bn(x, false).detach();
  CHECK(max_abs_diff(a, b) == 0.0f);
}

TEST_CASE("values stay finite through a deep composite") {
  Rng rng(11);
  nn::Conv2d<float> conv(rng, 3, 8, 3);
  nn::BatchNorm<float> bn(8);
  Var<float> x(rng.uniform_tensor<float>({2, 8, 8, 3}, 0, 1));
  Var<float> y = mish(bn(conv(x), true));
  CHECK(y.val().all_finite());
}
