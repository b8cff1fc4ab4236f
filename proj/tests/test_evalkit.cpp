#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pean/evalkit.hpp"

using namespace pean;
using namespace pean::evalkit;

namespace {

Image random_image(Rng& rng, int h, int w) {
  Image img(h, w, 3);
  for (float& v : img.px) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return img;
}

// independent PSNR: per-pixel loop with explicit accumulation
double psnr_oracle(const Image& a, const Image& b) {
  double se = 0;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a.at(y, x, c)) - b.at(y, x, c);
        se += d * d;
      }
  const double mse = se / (static_cast<double>(a.h) * a.w * 3);
  return 10.0 * std::log10(1.0 / mse);
}

// independent SSIM implementation: same reference constants, covariance via
// E[ab] - E[a]E[b] instead of centered sums
double ssim_oracle(const Image& ia, const Image& ib) {
  const int win = 11;
  const double sigma = 1.5, c1 = 0.0001, c2 = 0.0009;
  std::vector<double> w(static_cast<size_t>(win) * win);
  double wsum = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double dy = i - 5, dx = j - 5;
      w[static_cast<size_t>(i) * win + j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      wsum += w[static_cast<size_t>(i) * win + j];
    }
  for (double& v : w) v /= wsum;
  auto gray = [](const Image& im, int y, int x) {
    return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
  };
  double total = 0;
  int count = 0;
  for (int y = 0; y + win <= ia.h; ++y)
    for (int x = 0; x + win <= ia.w; ++x) {
      double ea = 0, eb = 0, eaa = 0, ebb = 0, eab = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wa = w[static_cast<size_t>(i) * win + j];
          const double va = gray(ia, y + i, x + j), vb = gray(ib, y + i, x + j);
          ea += wa * va;
          eb += wa * vb;
          eaa += wa * va * va;
          ebb += wa * vb * vb;
          eab += wa * va * vb;
        }
      const double var_a = eaa - ea * ea, var_b = ebb - eb * eb, cov = eab - ea * eb;
      total += ((2 * ea * eb + c1) * (2 * cov + c2)) /
               ((ea * ea + eb * eb + c1) * (var_a + var_b + c2));
      ++count;
    }
  return total / count;
}

// HSIC/Gram-form linear CKA oracle
double cka_oracle(const Tensor<double>& x, const Tensor<double>& y) {
  const int n = x.dim(0);
  auto gram = [n](const Tensor<double>& m) {
    std::vector<double> k(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int a = 0; a < m.dim(1); ++a) s += m.at(i, a) * m.at(j, a);
        k[static_cast<size_t>(i) * n + j] = s;
      }
    return k;
  };
  auto center = [n](std::vector<double> k) {
    std::vector<double> row(static_cast<size_t>(n), 0.0), col(static_cast<size_t>(n), 0.0);
    double all = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        row[static_cast<size_t>(i)] += k[static_cast<size_t>(i) * n + j] / n;
        col[static_cast<size_t>(j)] += k[static_cast<size_t>(i) * n + j] / n;
        all += k[static_cast<size_t>(i) * n + j] / (static_cast<double>(n) * n);
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        k[static_cast<size_t>(i) * n + j] +=
            all - row[static_cast<size_t>(i)] - col[static_cast<size_t>(j)];
    return k;
  };
  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const auto kx = center(gram(x)), ky = center(gram(y));
  return dot(kx, ky) / std::sqrt(dot(kx, kx) * dot(ky, ky));
}

}  // namespace

TEST_CASE("psnr sentinel and analytic values") {
  Rng rng(1);
  Image a = random_image(rng, 16, 24);
  CHECK(std::isinf(psnr(a, a)));
  Image zeros(16, 24, 3), ones(16, 24, 3);
  for (float& v : ones.px) v = 1.f;
  CHECK(psnr(zeros, ones) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("psnr matches the naive per-pixel oracle") {
  Rng rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    Image a = random_image(rng, 12, 20), b = random_image(rng, 12, 20);
    CHECK(std::abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-9);
  }
}

TEST_CASE("psnr strictly decreases with MSE") {
  Image base(16, 16, 3);
  Image n1 = base, n2 = base;
  for (size_t i = 0; i < n1.px.size(); ++i) n1.px[i] += 0.1f;
  for (size_t i = 0; i < n2.px.size(); ++i) n2.px[i] += 0.2f;
  CHECK(psnr(base, n1) > psnr(base, n2));
}

TEST_CASE("ssim basics") {
  Rng rng(3);
  Image a = random_image(rng, 16, 24);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Image neg = a;
  for (float& v : neg.px) v = 1.f - v;
  CHECK(ssim(a, neg) < 1.0);
  Image tiny(8, 8, 3);
  CHECK_THROWS_AS(ssim(tiny, tiny), Error);
}

TEST_CASE("ssim matches an independently coded windowed oracle") {
  Rng rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    Image a = random_image(rng, 16, 32), b = random_image(rng, 16, 32);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
  }
}

TEST_CASE("weighted accuracy reproduces the subset arithmetic") {
  // the published per-subset accuracies and TextZoom counts
  const double avg = weighted_accuracy(84.5, 71.4, 52.9, 1619, 1411, 1343);
  CHECK(std::abs(avg - 70.6) <= 0.05);
}

TEST_CASE("accuracy report basics") {
  std::vector<std::string> labels = {"cat", "dog", "bird", "fish"};
  std::vector<Difficulty> diff = {Difficulty::Easy, Difficulty::Easy, Difficulty::Medium,
                                  Difficulty::Hard};
  // all correct (case-insensitive, punctuation stripped)
  std::vector<std::string> preds = {"CAT", "d-o-g", "bird", "FISH!"};
  EvalReport all = accuracy(preds, labels, diff);
  CHECK(all.acc_easy == 100.0);
  CHECK(all.acc_medium == 100.0);
  CHECK(all.acc_hard == 100.0);
  CHECK(all.acc_avg == 100.0);
  // single-subset degenerate weights
  std::vector<std::string> l2 = {"a", "b"};
  std::vector<std::string> p2 = {"a", "x"};
  std::vector<Difficulty> d2 = {Difficulty::Medium, Difficulty::Medium};
  EvalReport r2 = accuracy(p2, l2, d2);
  CHECK(r2.acc_avg == doctest::Approx(r2.acc_medium));
  CHECK(r2.acc_medium == 50.0);
  CHECK_THROWS_AS(accuracy({"a"}, {"a", "b"}, {Difficulty::Easy, Difficulty::Easy}), Error);
}

TEST_CASE("linear CKA identities and invariances") {
  Rng rng(5);
  Tensor<double> x = rng.normal_tensor<double>({20, 6});
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-10));

  // orthogonal invariance: rotate feature space by a Givens rotation
  Tensor<double> xq = x;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (int i = 0; i < 20; ++i) {
    const double a = x.at(i, 1), b = x.at(i, 4);
    xq.at(i, 1) = c * a - s * b;
    xq.at(i, 4) = s * a + c * b;
  }
  CHECK(linear_cka(x, xq) == doctest::Approx(1.0).epsilon(1e-6));

  // isotropic scale invariance
  Tensor<double> xs = x;
  for (int64_t i = 0; i < xs.numel(); ++i) xs[i] *= -3.7;
  CHECK(linear_cka(x, xs) == doctest::Approx(1.0).epsilon(1e-6));

  // symmetry
  Tensor<double> y = rng.normal_tensor<double>({20, 9});
  CHECK(std::abs(linear_cka(x, y) - linear_cka(y, x)) < 1e-10);

  // zero-variance input is an explicit error
  Tensor<double> flat(Shape{20, 3}, 2.5);
  CHECK_THROWS_AS(linear_cka(x, flat), Error);
}

TEST_CASE("linear CKA matches the Gram/HSIC-form oracle") {
  Rng rng(6);
  for (int rep = 0; rep < 8; ++rep) {
    Tensor<double> x = rng.normal_tensor<double>({15, 7});
    Tensor<double> y = rng.normal_tensor<double>({15, 4});
    const double got = linear_cka(x, y);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0 + 1e-6);
    CHECK(std::abs(got - cka_oracle(x, y)) < 1e-8);
  }
}

TEST_CASE("activation pooling switches to channel means above the width bound") {
  Rng rng(7);
  // small tap: flattened as-is
  std::vector<Tensor<float>> small = {rng.normal_tensor<float>({4, 5, 3}),
                                      rng.normal_tensor<float>({4, 5, 3})};
  Tensor<double> ps = pool_activations(small);
  CHECK(ps.shape() == Shape{2, 60});
  // large tap: mean-pooled over spatial dims
  std::vector<Tensor<float>> big = {rng.normal_tensor<float>({64, 64, 3}),
                                    rng.normal_tensor<float>({64, 64, 3})};
  Tensor<double> pb = pool_activations(big);
  CHECK(pb.shape() == Shape{2, 3});
  double want = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) want += big[0].at(y, x, 1);
  want /= 64.0 * 64.0;
  CHECK(pb.at(0, 1) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("cka_compare produces a unit diagonal for identical taps") {
  Rng rng(8);
  std::vector<std::vector<Tensor<float>>> taps(4);
  for (auto& layer : taps)
    for (int s = 0; s < 6; ++s) layer.push_back(rng.normal_tensor<float>({3, 4, 2}));
  CkaResult r = cka_compare(taps, taps, 2);
  CHECK(r.n_layers == 4);
  CHECK(r.n_samples == 6);
  for (double v : r.diagonal) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r.diag_mean == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r.amm_group_mean == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r.srm_group_mean == doctest::Approx(1.0).epsilon(1e-10));
}
