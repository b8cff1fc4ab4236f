#pragma once

#include "pean/nn.hpp"

namespace pean {

// AdamW: Adam moments with decoupled weight decay applied to the values.
template <class T>
struct AdamW {
  T lr = T(1e-3);
  T beta1 = T(0.9), beta2 = T(0.999);
  T eps = T(1e-8);
  T weight_decay = T(0.01);
  int64_t t = 0;
  std::vector<Tensor<T>> m, v;  // aligned with the params collection order

  void init(const nn::Params<T>& ps) {
    m.clear();
    v.clear();
    for (const auto& [_, p] : ps.learnable) {
      m.push_back(Tensor<T>::zeros(p.shape()));
      v.push_back(Tensor<T>::zeros(p.shape()));
    }
    t = 0;
  }

  void step(nn::Params<T>& ps) {
    check(m.size() == ps.learnable.size(), "AdamW: state/param count mismatch");
    ++t;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (size_t i = 0; i < ps.learnable.size(); ++i) {
      Var<T>& p = ps.learnable[i].second;
      Tensor<T>& val = p.val();
      const Tensor<T>& g = p.grad();
      Tensor<T>& mi = m[i];
      Tensor<T>& vi = v[i];
      for (int64_t j = 0; j < val.numel(); ++j) {
        mi[j] = beta1 * mi[j] + (T(1) - beta1) * g[j];
        vi[j] = beta2 * vi[j] + (T(1) - beta2) * g[j] * g[j];
        const T mhat = mi[j] / bc1;
        const T vhat = vi[j] / bc2;
        val[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val[j]);
      }
    }
  }
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class T>
double clip_grad_norm(nn::Params<T>& ps, double max_norm) {
  double sq = 0;
  for (auto& [_, p] : ps.learnable) {
    const Tensor<T>& g = p.grad();
    for (int64_t i = 0; i < g.numel(); ++i) sq += static_cast<double>(g[i]) * g[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& [_, p] : ps.learnable) {
      Tensor<T>& g = p.grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

template <class T>
bool grads_finite(nn::Params<T>& ps) {
  for (auto& [_, p] : ps.learnable)
    if (!p.grad().all_finite()) return false;
  return true;
}

}  // namespace pean
