#pragma once

#include <functional>
#include <string>

#include "pean/nn.hpp"

namespace pean {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t coords_checked = 0;
  double tol = 0.0;
  bool passed = false;
};

// Compares analytic gradients against central finite differences at float64.
// `f` rebuilds the scalar loss from the current parameter values on every
// call. max_coords_per_param == 0 checks every coordinate; otherwise a
// seeded sample of coordinates per parameter is used.
inline GradCheckReport grad_check(const std::function<Var<double>()>& f, nn::Params<double>& params,
                                  double eps = 1e-5, double tol = 1e-4,
                                  int64_t max_coords_per_param = 0, uint64_t seed = 7) {
  GradCheckReport rep;
  rep.tol = tol;

  params.zero_grad();
  Var<double> loss = f();
  if (!is_finite(loss.item())) fail_numeric("grad_check: non-finite loss");
  backward(loss);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.learnable.size());
  for (auto& [_, v] : params.learnable) analytic.push_back(v.grad());

  Rng rng(seed);
  auto eval = [&]() {
    NoGradGuard ng;
    const double v = f().item();
    if (!is_finite(v)) fail_numeric("grad_check: non-finite loss during perturbation");
    return v;
  };

  for (size_t pi = 0; pi < params.learnable.size(); ++pi) {
    auto& [name, var] = params.learnable[pi];
    Tensor<double>& value = var.val();
    std::vector<int64_t> coords;
    if (max_coords_per_param > 0 && value.numel() > max_coords_per_param) {
      for (int64_t i = 0; i < max_coords_per_param; ++i)
        coords.push_back(rng.uniform_int(0, static_cast<int>(value.numel() - 1)));
    } else {
      coords.resize(static_cast<size_t>(value.numel()));
      for (int64_t i = 0; i < value.numel(); ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t idx : coords) {
      const double saved = value[idx];
      value[idx] = saved + eps;
      const double fp = eval();
      value[idx] = saved - eps;
      const double fm = eval();
      value[idx] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic[pi][idx];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = idx;
        rep.worst_analytic = an;
        rep.worst_numeric = fd;
      }
    }
  }
  rep.passed = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace pean
