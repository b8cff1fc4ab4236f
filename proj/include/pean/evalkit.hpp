#pragma once

#include <json.hpp>

#include <limits>
#include <string>
#include <vector>

#include "pean/charset.hpp"
#include "pean/datagen.hpp"
#include "pean/tensor.hpp"

namespace pean::evalkit {

// 10*log10(max^2 / MSE); +inf for identical images.
inline double psnr(const Image& a, const Image& b, double max_val = 1.0) {
  const double mse = image_mse(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

// Mean local SSIM on grayscale over valid 11x11 windows, Gaussian sigma 1.5,
// K1=0.01, K2=0.03 (reference constants), dynamic range 1.
double ssim(const Image& a, const Image& b);

struct EvalReport {
  // accuracy in percent per difficulty plus the count-weighted average
  double acc_easy = 0, acc_medium = 0, acc_hard = 0, acc_avg = 0;
  int n_easy = 0, n_medium = 0, n_hard = 0;
  double psnr_mean = 0, ssim_mean = 0;

  nlohmann::json to_json() const {
    return {{"acc_easy", acc_easy},     {"acc_medium", acc_medium}, {"acc_hard", acc_hard},
            {"acc_avg", acc_avg},       {"n_easy", n_easy},         {"n_medium", n_medium},
            {"n_hard", n_hard},         {"psnr_mean", psnr_mean},   {"ssim_mean", ssim_mean}};
  }
};

// Weighted accuracy from per-subset accuracies (percent) and counts:
// (acc_e*N_e + acc_m*N_m + acc_h*N_h) / (N_e + N_m + N_h).
inline double weighted_accuracy(double acc_e, double acc_m, double acc_h, int n_e, int n_m,
                                int n_h) {
  check(n_e + n_m + n_h > 0, "weighted_accuracy: empty subsets");
  return (acc_e * n_e + acc_m * n_m + acc_h * n_h) / static_cast<double>(n_e + n_m + n_h);
}

// Exact-match accuracy after case-insensitive alphanumeric normalization.
inline EvalReport accuracy(const std::vector<std::string>& preds,
                           const std::vector<std::string>& labels,
                           const std::vector<Difficulty>& difficulty) {
  check(preds.size() == labels.size() && preds.size() == difficulty.size(),
        "accuracy: length mismatch");
  int n[3] = {0, 0, 0}, correct[3] = {0, 0, 0};
  for (size_t i = 0; i < preds.size(); ++i) {
    const int d = static_cast<int>(difficulty[i]);
    ++n[d];
    if (normalize_text(preds[i]) == normalize_text(labels[i])) ++correct[d];
  }
  auto pct = [](int c, int total) { return total == 0 ? 0.0 : 100.0 * c / total; };
  EvalReport r;
  r.n_easy = n[0];
  r.n_medium = n[1];
  r.n_hard = n[2];
  r.acc_easy = pct(correct[0], n[0]);
  r.acc_medium = pct(correct[1], n[1]);
  r.acc_hard = pct(correct[2], n[2]);
  r.acc_avg = weighted_accuracy(r.acc_easy, r.acc_medium, r.acc_hard, r.n_easy, r.n_medium,
                                r.n_hard);
  return r;
}

// Linear (feature-space) CKA: ||Yc'Xc||_F^2 / (||Xc'Xc||_F ||Yc'Yc||_F).
// X is n x p1, Y is n x p2, same sample count; columns centered internally.
double linear_cka(const Tensor<double>& x, const Tensor<double>& y);

// Activation matrix for CKA: flattened per-layer taps, mean-pooled over
// spatial dims when the flattened width would exceed 8192.
Tensor<double> pool_activations(const std::vector<Tensor<float>>& per_sample_taps);

struct CkaResult {
  int n_samples = 0;
  int n_layers = 0;
  std::vector<double> matrix;     // n_layers x n_layers, [i*n_layers + j]
  std::vector<double> diagonal;   // matched-layer CKA
  double diag_mean = 0;
  double amm_group_mean = 0;      // layers [0, n_amm)
  double srm_group_mean = 0;      // layers [n_amm, n_layers)
  int n_amm_layers = 0;

  nlohmann::json to_json() const;
};

// CKA between two tap collections: taps_a[layer][sample], taps_b likewise.
CkaResult cka_compare(const std::vector<std::vector<Tensor<float>>>& taps_a,
                      const std::vector<std::vector<Tensor<float>>>& taps_b, int n_amm_layers);

// Simple heat-map PNG of the CKA matrix (viridis-ish ramp).
void write_cka_heatmap(const std::string& path, const CkaResult& result, int cell = 12);

}  // namespace pean::evalkit
