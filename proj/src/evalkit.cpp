#include "pean/evalkit.hpp"

#include <Eigen/Core>

namespace pean::evalkit {

namespace {

std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(static_cast<size_t>(img.h) * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      g[static_cast<size_t>(y) * img.w + x] =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  return g;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  check(a.h == b.h && a.w == b.w, "ssim: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, kK1 = 0.01, kK2 = 0.03, kL = 1.0;
  if (a.h < kWin || a.w < kWin) fail_shape("ssim: image smaller than the 11x11 window");

  double w[kWin][kWin], wsum = 0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - kWin / 2, dx = j - kWin / 2;
      w[i][j] = std::exp(-(dy * dy + dx * dx) / (2 * kSigma * kSigma));
      wsum += w[i][j];
    }
  for (auto& row : w)
    for (double& v : row) v /= wsum;

  const std::vector<double> ga = to_gray(a), gb = to_gray(b);
  const double c1 = (kK1 * kL) * (kK1 * kL), c2 = (kK2 * kL) * (kK2 * kL);
  double total = 0;
  int count = 0;
  for (int y = 0; y + kWin <= a.h; ++y)
    for (int x = 0; x + kWin <= a.w; ++x) {
      double mu_a = 0, mu_b = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          mu_a += w[i][j] * ga[static_cast<size_t>(y + i) * a.w + x + j];
          mu_b += w[i][j] * gb[static_cast<size_t>(y + i) * a.w + x + j];
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double da = ga[static_cast<size_t>(y + i) * a.w + x + j] - mu_a;
          const double db = gb[static_cast<size_t>(y + i) * a.w + x + j] - mu_b;
          va += w[i][j] * da * da;
          vb += w[i][j] * db * db;
          cov += w[i][j] * da * db;
        }
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

double linear_cka(const Tensor<double>& x, const Tensor<double>& y) {
  check(x.ndim() == 2 && y.ndim() == 2, "linear_cka: rank-2 activations expected");
  const int n = x.dim(0);
  check(n >= 2 && y.dim(0) == n, "linear_cka: need matching sample counts, n >= 2");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> mx(x.data(), n, x.dim(1));
  Eigen::Map<const Mat> my(y.data(), n, y.dim(1));
  Mat xc = mx.rowwise() - mx.colwise().mean();
  Mat yc = my.rowwise() - my.colwise().mean();
  const double cross = (yc.transpose() * xc).squaredNorm();
  const double nx = (xc.transpose() * xc).norm();
  const double ny = (yc.transpose() * yc).norm();
  if (nx == 0.0 || ny == 0.0) fail_numeric("linear_cka: zero-variance activations");
  return cross / (nx * ny);
}

Tensor<double> pool_activations(const std::vector<Tensor<float>>& per_sample_taps) {
  check(!per_sample_taps.empty(), "pool_activations: no samples");
  const Tensor<float>& first = per_sample_taps.front();
  const int64_t flat = first.numel();
  const bool pool = flat > 8192 && first.ndim() >= 3;
  // taps are [H,W,C] (or [B=1,H,W,C]); pooled form keeps the channel axis
  const int c = first.dim(first.ndim() - 1);
  const int64_t spatial = flat / c;
  const int64_t p = pool ? c : flat;
  Tensor<double> out(Shape{static_cast<int>(per_sample_taps.size()), static_cast<int>(p)});
  for (size_t s = 0; s < per_sample_taps.size(); ++s) {
    const Tensor<float>& t = per_sample_taps[s];
    check(t.numel() == flat, "pool_activations: inconsistent tap shapes");
    if (pool) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int64_t i = 0; i < spatial; ++i) acc += t[i * c + ch];
        out.at(static_cast<int>(s), ch) = acc / static_cast<double>(spatial);
      }
    } else {
      for (int64_t i = 0; i < flat; ++i) out[static_cast<int64_t>(s) * p + i] = t[i];
    }
  }
  return out;
}

nlohmann::json CkaResult::to_json() const {
  nlohmann::json m = nlohmann::json::array();
  for (int i = 0; i < n_layers; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < n_layers; ++j) row.push_back(matrix[static_cast<size_t>(i) * n_layers + j]);
    m.push_back(row);
  }
  return {{"n_samples", n_samples},   {"n_layers", n_layers},
          {"matrix", m},              {"diagonal", diagonal},
          {"diag_mean", diag_mean},   {"amm_group_mean", amm_group_mean},
          {"srm_group_mean", srm_group_mean}, {"n_amm_layers", n_amm_layers}};
}

CkaResult cka_compare(const std::vector<std::vector<Tensor<float>>>& taps_a,
                      const std::vector<std::vector<Tensor<float>>>& taps_b, int n_amm_layers) {
  check(!taps_a.empty() && taps_a.size() == taps_b.size(),
        "cka_compare: tap-count mismatch between models");
  const int layers = static_cast<int>(taps_a.size());
  CkaResult r;
  r.n_layers = layers;
  r.n_amm_layers = n_amm_layers;
  r.n_samples = static_cast<int>(taps_a[0].size());
  std::vector<Tensor<double>> xa(static_cast<size_t>(layers)), xb(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    xa[static_cast<size_t>(l)] = pool_activations(taps_a[static_cast<size_t>(l)]);
    xb[static_cast<size_t>(l)] = pool_activations(taps_b[static_cast<size_t>(l)]);
  }
  r.matrix.assign(static_cast<size_t>(layers) * layers, 0.0);
  for (int i = 0; i < layers; ++i)
    for (int j = 0; j < layers; ++j)
      r.matrix[static_cast<size_t>(i) * layers + j] =
          linear_cka(xa[static_cast<size_t>(i)], xb[static_cast<size_t>(j)]);
  double diag = 0, amm = 0, srm = 0;
  for (int i = 0; i < layers; ++i) {
    const double v = r.matrix[static_cast<size_t>(i) * layers + i];
    r.diagonal.push_back(v);
    diag += v;
    (i < n_amm_layers ? amm : srm) += v;
  }
  r.diag_mean = diag / layers;
  r.amm_group_mean = n_amm_layers > 0 ? amm / n_amm_layers : 0.0;
  r.srm_group_mean = layers > n_amm_layers ? srm / (layers - n_amm_layers) : 0.0;
  return r;
}

void write_cka_heatmap(const std::string& path, const CkaResult& result, int cell) {
  const int n = result.n_layers;
  Image img(n * cell, n * cell, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = std::clamp(result.matrix[static_cast<size_t>(i) * n + j], 0.0, 1.0);
      // dark blue -> teal -> yellow ramp
      const float rr = static_cast<float>(std::clamp(2.0 * v - 1.0, 0.0, 1.0));
      const float gg = static_cast<float>(v);
      const float bb = static_cast<float>(std::clamp(1.0 - 1.5 * v, 0.0, 1.0) * 0.6 + 0.2);
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x) {
          img.at(i * cell + y, j * cell + x, 0) = rr;
          img.at(i * cell + y, j * cell + x, 1) = gg;
          img.at(i * cell + y, j * cell + x, 2) = bb;
        }
    }
  save_png(path, img);
}

}  // namespace pean::evalkit
