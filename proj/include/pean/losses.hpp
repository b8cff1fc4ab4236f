#pragma once

#include <json.hpp>

#include "pean/ctc.hpp"
#include "pean/nn.hpp"

namespace pean::losses {

// lambda1..lambda5 of the five-term objective.
struct LossWeights {
  double l1 = 1.0;   // diffusion MAE
  double l2 = 1.0;   // diffusion CTC
  double l3 = 0.8;   // image MSE
  double l4 = 75.0;  // stroke/edge term
  double l5 = 1.0;   // ARM CTC

  nlohmann::json to_json() const {
    return {{"lambda1", l1}, {"lambda2", l2}, {"lambda3", l3}, {"lambda4", l4}, {"lambda5", l5}};
  }
  static LossWeights from_json(const nlohmann::json& j) {
    LossWeights w;
    w.l1 = j.value("lambda1", w.l1);
    w.l2 = j.value("lambda2", w.l2);
    w.l3 = j.value("lambda3", w.l3);
    w.l4 = j.value("lambda4", w.l4);
    w.l5 = j.value("lambda5", w.l5);
    return w;
  }
};

// Sobel gradient magnitude on grayscale, the documented stand-in for the
// stroke-focused attention maps. An alternative map provider can be passed
// to image_loss for exact reproduction later. Border pixels are masked so
// constant images have exactly zero response.
template <class T>
Var<T> sobel_edge_map(const Var<T>& img) {
  const int b = img.dim(0), h = img.dim(1), w = img.dim(2);
  check(img.dim(3) == 3, "sobel_edge_map: RGB input expected");
  Tensor<T> gray_w(Shape{3, 1}, {T(0.299), T(0.587), T(0.114)});
  Var<T> gray = affine(img, Var<T>::constant(gray_w));  // [B,H,W,1]

  Tensor<T> kx(Shape{3, 3, 1, 1}, {T(-1), T(0), T(1), T(-2), T(0), T(2), T(-1), T(0), T(1)});
  Tensor<T> ky(Shape{3, 3, 1, 1}, {T(-1), T(-2), T(-1), T(0), T(0), T(0), T(1), T(2), T(1)});
  Var<T> gx = conv2d(gray, Var<T>::constant(kx));
  Var<T> gy = conv2d(gray, Var<T>::constant(ky));
  Var<T> mag = sqrt_op(add_scalar(add(square(gx), square(gy)), T(1e-12)));

  Tensor<T> mask(Shape{b, h, w, 1});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 1; y < h - 1; ++y)
      for (int x = 1; x < w - 1; ++x) mask.at(ib, y, x, 0) = T(1);
  return mul(mag, Var<T>::constant(mask));
}

template <class T>
using EdgeMapFn = std::function<Var<T>(const Var<T>&)>;

template <class T>
struct ImageLossTerms {
  Var<T> mse;  // raw mean-squared pixel error
  Var<T> sfm;  // raw L1 between edge maps
};

template <class T>
ImageLossTerms<T> image_loss(const Var<T>& sr, const Var<T>& hr, EdgeMapFn<T> edge_map = nullptr) {
  check(sr.val().same_shape(hr.val()),
        "image_loss: shape mismatch " + shape_str(sr.shape()) + " vs " + shape_str(hr.shape()));
  if (!edge_map) edge_map = [](const Var<T>& x) { return sobel_edge_map(x); };
  ImageLossTerms<T> out;
  out.mse = mean_sq_diff(hr, sr);
  out.sfm = mean_abs_diff(edge_map(hr), edge_map(sr));
  return out;
}

// Eq.-9-style text term (raw CTC; lambda5 applies in the report/total).
template <class T>
Var<T> text_loss(const Var<T>& arm_logits, const std::vector<std::vector<int>>& labels) {
  return rec::ctc_loss(arm_logits, labels);
}

// Per-step loss accounting. Raw terms in, weighted terms and the exact
// weighted total out; `total = sum(weighted)` holds by construction and is
// what the training loop optimizes.
struct LossReport {
  double mae_raw = 0, ctc_t_raw = 0, mse_raw = 0, sfm_raw = 0, ctc_a_raw = 0;
  double mae_w = 0, ctc_t_w = 0, mse_w = 0, sfm_w = 0, ctc_a_w = 0;
  double total = 0;
  bool has_diffusion_terms = false;

  nlohmann::json to_json() const {
    return {{"mae_raw", mae_raw},   {"ctc_t_raw", ctc_t_raw}, {"mse_raw", mse_raw},
            {"sfm_raw", sfm_raw},   {"ctc_a_raw", ctc_a_raw}, {"mae_w", mae_w},
            {"ctc_t_w", ctc_t_w},   {"mse_w", mse_w},         {"sfm_w", sfm_w},
            {"ctc_a_w", ctc_a_w},   {"total", total},
            {"has_diffusion_terms", has_diffusion_terms}};
  }
};

inline LossReport total_loss(double mae_raw, double ctc_t_raw, double mse_raw, double sfm_raw,
                             double ctc_a_raw, const LossWeights& w,
                             bool has_diffusion_terms = true) {
  for (double v : {mae_raw, ctc_t_raw, mse_raw, sfm_raw, ctc_a_raw})
    if (!is_finite(v)) fail_numeric("total_loss: non-finite raw term");
  LossReport r;
  r.has_diffusion_terms = has_diffusion_terms;
  r.mae_raw = mae_raw;
  r.ctc_t_raw = ctc_t_raw;
  r.mse_raw = mse_raw;
  r.sfm_raw = sfm_raw;
  r.ctc_a_raw = ctc_a_raw;
  r.mae_w = w.l1 * mae_raw;
  r.ctc_t_w = w.l2 * ctc_t_raw;
  r.mse_w = w.l3 * mse_raw;
  r.sfm_w = w.l4 * sfm_raw;
  r.ctc_a_w = w.l5 * ctc_a_raw;
  r.total = r.mae_w + r.ctc_t_w + r.mse_w + r.sfm_w + r.ctc_a_w;
  return r;
}

}  // namespace pean::losses
