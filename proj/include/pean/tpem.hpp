#pragma once

#include <functional>

#include "pean/ctc.hpp"
#include "pean/nn.hpp"

namespace pean::tpem {

constexpr int kSeqLen = 26;
constexpr int kAlphabet = 37;

// Linear-beta DDPM schedule; index i holds step t = i+1.
struct NoiseSchedule {
  int steps = 0;
  double beta_min = 0, beta_max = 0;
  std::vector<double> beta, alpha, alpha_bar;

  static NoiseSchedule make(int T, double beta_lo = 1e-4, double beta_hi = 0.02) {
    if (T < 1) fail_config("noise schedule: T must be >= 1");
    if (!(0 < beta_lo && beta_lo <= beta_hi && beta_hi < 1))
      fail_config("noise schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.steps = T;
    s.beta_min = beta_lo;
    s.beta_max = beta_hi;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
      s.beta[static_cast<size_t>(i)] =
          T == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * i / static_cast<double>(T - 1);
      s.alpha[static_cast<size_t>(i)] = 1.0 - s.beta[static_cast<size_t>(i)];
      prod *= s.alpha[static_cast<size_t>(i)];
      s.alpha_bar[static_cast<size_t>(i)] = prod;
    }
    return s;
  }

  double abar(int t) const {  // alpha_bar at step t, with abar(0) = 1
    check(t >= 0 && t <= steps, "schedule: t out of range");
    return t == 0 ? 1.0 : alpha_bar[static_cast<size_t>(t - 1)];
  }
  double beta_at(int t) const {
    check(t >= 1 && t <= steps, "schedule: t out of range");
    return beta[static_cast<size_t>(t - 1)];
  }
  double alpha_at(int t) const { return 1.0 - beta_at(t); }
  // posterior variance beta-tilde for a t -> t_prev jump
  double posterior_var(int t, int t_prev) const {
    const double ab_t = abar(t), ab_p = abar(t_prev);
    return (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p);
  }

  // Descending DDIM sub-sequence of length S starting at T.
  std::vector<int> ddim_timesteps(int S) const {
    if (S < 1 || S > steps) fail_config("ddim: need 1 <= S <= T");
    std::vector<int> ts(static_cast<size_t>(S));
    for (int k = 0; k < S; ++k)
      ts[static_cast<size_t>(k)] = static_cast<int>(
          std::lround(static_cast<double>(steps) * (S - k) / static_cast<double>(S)));
    ts[0] = steps;
    for (size_t i = 1; i < ts.size(); ++i)
      check(ts[i] < ts[i - 1] && ts[i] >= 1, "ddim: degenerate timestep grid");
    return ts;
  }
};

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  check(t >= 1 && t <= sched.steps, "q_sample: t out of range");
  check(x0.same_shape(eps), "q_sample: eps shape mismatch");
  const T a = static_cast<T>(std::sqrt(sched.abar(t)));
  const T b = static_cast<T>(std::sqrt(1.0 - sched.abar(t)));
  Tensor<T> out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

// Sinusoidal timestep encoding, dim 26 (positional-encoding style).
template <class T>
Tensor<T> time_encoding(const std::vector<int>& t) {
  const int b = static_cast<int>(t.size());
  Tensor<T> out(Shape{b, kSeqLen});
  for (int ib = 0; ib < b; ++ib)
    for (int i = 0; i < kSeqLen / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / kSeqLen);
      out.at(ib, 2 * i) = static_cast<T>(std::sin(t[static_cast<size_t>(ib)] * freq));
      out.at(ib, 2 * i + 1) = static_cast<T>(std::cos(t[static_cast<size_t>(ib)] * freq));
    }
  return out;
}

// MLP denoiser f_theta(x_t, P^l, t) predicting x0 (the enhanced prior),
// shapes [N,26,37]+[N,26,37]+t -> [N,26,37]:
//   concat on the sequence axis -> kernel-1 conv over the 37-wide axis,
//   then four blocks of BatchNorm -> Linear -> Swish -> (+ time embedding),
//   widths 37 -> 148 -> 296 -> 148 -> 37.
template <class T>
struct Denoiser {
  nn::Conv1d<T> fuse;
  struct Block {
    nn::BatchNorm<T> bn;
    nn::Linear<T> fc;
    nn::Linear<T> time_fc;
  };
  std::vector<Block> blocks;

  Denoiser() = default;
  explicit Denoiser(Rng& rng) : fuse(rng, 2 * kSeqLen, kSeqLen, 1) {
    const int widths[5] = {kAlphabet, 148, 296, 148, kAlphabet};
    for (int i = 0; i < 4; ++i) {
      Block b;
      b.bn = nn::BatchNorm<T>(kSeqLen, 1);
      b.fc = nn::Linear<T>(rng, widths[i], widths[i + 1]);
      b.time_fc = nn::Linear<T>(rng, kSeqLen, kSeqLen);
      blocks.push_back(std::move(b));
    }
  }

  // x_t, p_l: [B,26,37]; t: one timestep per batch item.
  Var<T> operator()(const Var<T>& x_t, const Var<T>& p_l, const std::vector<int>& t,
                    bool training) {
    check(x_t.shape().size() == 3 && x_t.dim(1) == kSeqLen && x_t.dim(2) == kAlphabet,
          "denoiser: x_t must be [B,26,37], got " + shape_str(x_t.shape()));
    check(x_t.val().same_shape(p_l.val()), "denoiser: P^l shape mismatch");
    check(static_cast<int>(t.size()) == x_t.dim(0), "denoiser: one timestep per item");
    Var<T> h = fuse(concat_axis(x_t, p_l, 1));
    Var<T> te = Var<T>::constant(time_encoding<T>(t));
    for (auto& blk : blocks) {
      h = swish(blk.fc(blk.bn(h, training)));
      Var<T> tv = reshape(blk.time_fc(te), Shape{x_t.dim(0), kSeqLen, 1});
      h = add_bcast_last(h, tv);
    }
    return h;
  }

  void collect(nn::Params<T>& ps, const std::string& p) {
    fuse.collect(ps, p + ".fuse");
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string bp = p + ".block" + std::to_string(i);
      blocks[i].bn.collect(ps, bp + ".bn");
      blocks[i].fc.collect(ps, bp + ".fc");
      blocks[i].time_fc.collect(ps, bp + ".time_fc");
    }
  }
};

// Injected step noise; the default draws from the sampler's own stream.
template <class T>
using NoiseFn = std::function<Tensor<T>(Shape)>;

// Ancestral DDPM sampling, T steps from seeded x_T ~ N(0,I). Runs the
// denoiser in eval mode with no graph; the result is the raw x0 estimate.
// F is anything callable as f(x_t, p_l, t_vec, training) -> Var<T>.
template <class T, class F = Denoiser<T>>
Tensor<T> ddpm_sample(F& f, const Tensor<T>& p_l, const NoiseSchedule& sched,
                      uint64_t seed, NoiseFn<T> step_noise = nullptr) {
  NoGradGuard ng;
  Rng rng(seed);
  if (!step_noise) step_noise = [&rng](Shape s) { return rng.normal_tensor<T>(std::move(s)); };
  Tensor<T> x = rng.normal_tensor<T>({1, kSeqLen, kAlphabet});
  Var<T> pl = Var<T>::constant(p_l.reshaped({1, kSeqLen, kAlphabet}));
  Tensor<T> x0_hat;
  for (int t = sched.steps; t >= 1; --t) {
    x0_hat = f(Var<T>::constant(x), pl, {t}, false).detach();
    if (t == 1) break;
    const double ab_t = sched.abar(t), ab_p = sched.abar(t - 1);
    const double beta_t = sched.beta_at(t), alpha_t = sched.alpha_at(t);
    const double c0 = std::sqrt(ab_p) * beta_t / (1.0 - ab_t);
    const double cx = std::sqrt(alpha_t) * (1.0 - ab_p) / (1.0 - ab_t);
    const double sigma = std::sqrt(sched.posterior_var(t, t - 1));
    Tensor<T> z = step_noise(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
      x[i] = static_cast<T>(c0 * x0_hat[i] + cx * x[i] + sigma * z[i]);
    if (!x.all_finite()) fail_numeric("ddpm_sample: non-finite state at t=" + std::to_string(t));
  }
  return x0_hat.reshaped({kSeqLen, kAlphabet});
}

// DDIM over an S-step sub-sequence. eta=0 (the spec contract) is fully
// deterministic given the seed; for S=1 this is a single denoiser call on
// x_T. eta>0 exists for the DDPM-equivalence test.
template <class T, class F = Denoiser<T>>
Tensor<T> ddim_sample(F& f, const Tensor<T>& p_l, const NoiseSchedule& sched, int S,
                      uint64_t seed, double eta = 0.0, NoiseFn<T> step_noise = nullptr) {
  NoGradGuard ng;
  const std::vector<int> ts = sched.ddim_timesteps(S);
  Rng rng(seed);
  if (!step_noise) step_noise = [&rng](Shape s) { return rng.normal_tensor<T>(std::move(s)); };
  Tensor<T> x = rng.normal_tensor<T>({1, kSeqLen, kAlphabet});
  Var<T> pl = Var<T>::constant(p_l.reshaped({1, kSeqLen, kAlphabet}));
  Tensor<T> x0_hat;
  for (int k = 0; k < S; ++k) {
    const int t = ts[static_cast<size_t>(k)];
    const int t_prev = k + 1 < S ? ts[static_cast<size_t>(k + 1)] : 0;
    x0_hat = f(Var<T>::constant(x), pl, {t}, false).detach();
    if (t_prev == 0) break;
    const double ab_t = sched.abar(t), ab_p = sched.abar(t_prev);
    const double sigma = eta * std::sqrt(sched.posterior_var(t, t_prev));
    const double ce = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    Tensor<T> z = sigma > 0 ? step_noise(x.shape()) : Tensor<T>::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double eps_hat = (x[i] - std::sqrt(ab_t) * x0_hat[i]) / std::sqrt(1.0 - ab_t);
      x[i] = static_cast<T>(std::sqrt(ab_p) * x0_hat[i] + ce * eps_hat + sigma * z[i]);
    }
    if (!x.all_finite()) fail_numeric("ddim_sample: non-finite state at t=" + std::to_string(t));
  }
  return x0_hat.reshaped({kSeqLen, kAlphabet});
}

// Eq.-style diffusion objective: lambda1 * MAE(P^h, x0_hat) + lambda2 * CTC.
template <class T>
struct DiffusionLoss {
  Var<T> total, mae, ctc;
};

template <class T>
DiffusionLoss<T> diffusion_loss(const Var<T>& x0_hat, const Var<T>& p_h,
                                const std::vector<std::vector<int>>& labels, T lambda1 = T(1),
                                T lambda2 = T(1)) {
  DiffusionLoss<T> out;
  out.mae = mean_abs_diff(p_h, x0_hat);
  out.ctc = rec::ctc_loss(x0_hat, labels);
  out.total = add(mul_scalar(out.mae, lambda1), mul_scalar(out.ctc, lambda2));
  return out;
}

}  // namespace pean::tpem
