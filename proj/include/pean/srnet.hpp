#pragma once

#include "pean/amm.hpp"
#include "pean/recognizer.hpp"
#include "pean/tpem.hpp"

namespace pean::sr {

enum class PriorSource { TpLr, TpHr, Etp };

inline const char* prior_source_name(PriorSource p) {
  switch (p) {
    case PriorSource::TpLr: return "tp-lr";
    case PriorSource::TpHr: return "tp-hr";
    default: return "etp";
  }
}
inline std::optional<PriorSource> prior_source_from_name(const std::string& s) {
  if (s == "tp-lr") return PriorSource::TpLr;
  if (s == "tp-hr") return PriorSource::TpHr;
  if (s == "etp") return PriorSource::Etp;
  return std::nullopt;
}

struct SrConfig {
  amm::AmmConfig amm;
  std::vector<int> arm_channels = {64, 64, 96, 96, 128, 128};
  int arm_lstm_hidden = 96;
  int diffusion_steps = 1000;
  double beta_min = 1e-4, beta_max = 0.02;
  int ddim_steps = 1;  // S
};

// Upsampling head: 4 x (conv3x3 + BN + Mish), conv to 3*r^2 channels,
// PixelShuffle r=2, output conv + sigmoid. Taps: post-BN and post-Mish per
// refinement stage (8), post-expand conv (1), post-shuffle (1) -> 10.
template <class T>
struct Srm {
  static constexpr int kStages = 4;
  static constexpr int kTaps = 2 * kStages + 2;
  std::vector<nn::Conv2d<T>> convs;
  std::vector<nn::BatchNorm<T>> bns;
  nn::Conv2d<T> expand;   // C1 -> 3 * r^2
  nn::Conv2d<T> out_conv; // 3 -> 3

  Srm() = default;
  Srm(Rng& rng, int c1) : expand(rng, c1, 12, 3), out_conv(rng, 3, 3, 3) {
    for (int i = 0; i < kStages; ++i) {
      convs.emplace_back(rng, c1, c1, 3);
      bns.emplace_back(c1);
    }
  }

  Var<T> operator()(Var<T> x, bool training, std::vector<Tensor<T>>* taps = nullptr) {
    for (int i = 0; i < kStages; ++i) {
      Var<T> pre = bns[static_cast<size_t>(i)](convs[static_cast<size_t>(i)](x), training);
      if (taps) taps->push_back(pre.detach());
      x = mish(pre);
      if (taps) taps->push_back(x.detach());
    }
    x = expand(x);
    if (taps) taps->push_back(x.detach());
    x = pixel_shuffle(x, 2);
    if (taps) taps->push_back(x.detach());
    return sigmoid(out_conv(x));
  }

  void collect(nn::Params<T>& ps, const std::string& p) {
    for (size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(ps, p + ".conv" + std::to_string(i));
      bns[i].collect(ps, p + ".bn" + std::to_string(i));
    }
    expand.collect(ps, p + ".expand");
    out_conv.collect(ps, p + ".out");
  }
};

struct ForwardResult {
  // Valid only while the originating graph is alive.
  // taps: 2N from AMM then kTaps from SRM.
};

// The SR network proper: shallow conv, FAM, AMM stack, SRM, ARM head and
// the TPEM denoiser (trained in the finetune stage). The TPG lives outside
// this struct (frozen recognizer).
template <class T>
struct PeanModel {
  SrConfig cfg;
  nn::Conv2d<T> shallow;
  amm::Fam<T> fam;
  std::vector<amm::AmmBlock<T>> blocks;
  Srm<T> srm;
  rec::ArmHead<T> arm;
  tpem::Denoiser<T> denoiser;
  tpem::NoiseSchedule schedule;

  PeanModel() = default;
  PeanModel(Rng& rng, SrConfig config)
      : cfg(std::move(config)),
        shallow(rng, 3, cfg.amm.c1, 3),
        fam(rng, cfg.amm.c1, tpem::kAlphabet),
        srm(rng, cfg.amm.c1),
        arm(rng, cfg.amm.c1, cfg.arm_channels, cfg.arm_lstm_hidden),
        denoiser(rng),
        schedule(tpem::NoiseSchedule::make(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max)) {
    for (int i = 0; i < cfg.amm.n_blocks; ++i) blocks.emplace_back(rng, cfg.amm, 16, 64);
  }

  int tap_count() const { return 2 * cfg.amm.n_blocks + Srm<T>::kTaps; }

  Var<T> shallow_extract(const Var<T>& lr) {
    check(lr.shape().size() == 4 && lr.dim(1) == 16 && lr.dim(2) == 64 && lr.dim(3) == 3,
          "shallow_extract: expected [B,16,64,3], got " + shape_str(lr.shape()));
    return shallow(lr);
  }

  // lr [B,16,64,3], prior [B,26,37] row-stochastic. Returns the SR image;
  // f_n_o (the last AMM output) is exposed for the ARM.
  Var<T> forward(const Var<T>& lr, const Var<T>& prior, bool training, Var<T>* f_n_o = nullptr,
                 std::vector<Tensor<T>>* taps = nullptr) {
    Var<T> f_s = shallow_extract(lr);
    Var<T> f_a = fam(f_s, prior);
    Var<T> f = amm_forward(f_a, blocks, taps);
    if (f_n_o) *f_n_o = f;
    return srm(f, training, taps);
  }

  // Learnable surface; the denoiser can be excluded (pretrain stage).
  void collect(nn::Params<T>& ps, bool include_denoiser = true) {
    shallow.collect(ps, "shallow");
    fam.collect(ps, "fam");
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(ps, "amm.b" + std::to_string(i));
    srm.collect(ps, "srm");
    arm.collect(ps, "arm");
    if (include_denoiser) denoiser.collect(ps, "denoiser");
  }
};

template <class T>
void set_requires_grad(nn::Params<T>& ps, bool value) {
  for (auto& [_, p] : ps.learnable) p.node()->requires_grad = value;
}

// Model plus its frozen text prior generator.
template <class T>
struct PeanSystem {
  PeanModel<T> model;
  rec::Recognizer<T> tpg;

  // Row-stochastic prior for the requested source. ETP uses eta=0 DDIM with
  // S steps; the per-item seed is derived from `seed` and the batch index.
  Var<T> make_prior(PriorSource source, const Var<T>& lr, const Var<T>& hr, uint64_t seed) {
    NoGradGuard ng;
    switch (source) {
      case PriorSource::TpLr: return tpg.recognize(lr);
      case PriorSource::TpHr:
        check(hr.defined(), "prior tp-hr requires the paired HR image");
        return tpg.recognize(hr);
      default: {
        Var<T> p_l = tpg.recognize(lr);
        const int b = lr.dim(0);
        Tensor<T> etp(Shape{b, tpem::kSeqLen, tpem::kAlphabet});
        for (int i = 0; i < b; ++i) {
          Tensor<T> pl_i(Shape{tpem::kSeqLen, tpem::kAlphabet});
          std::copy_n(p_l.val().data() + static_cast<int64_t>(i) * pl_i.numel(), pl_i.numel(),
                      pl_i.data());
          Tensor<T> pe = tpem::ddim_sample(model.denoiser, pl_i, model.schedule,
                                           model.cfg.ddim_steps, Rng(seed).fork(i).next_u64());
          std::copy_n(pe.data(), pe.numel(), etp.data() + static_cast<int64_t>(i) * pe.numel());
        }
        return softmax_lastdim(Var<T>::constant(etp));
      }
    }
  }

  // Inference-style pass: prior per source, AMM + SRM taps (2N + 10).
  Var<T> run(const Var<T>& lr, const Var<T>& hr, PriorSource source, uint64_t seed,
             std::vector<Tensor<T>>* taps = nullptr, Var<T>* prior_used = nullptr) {
    Var<T> prior = make_prior(source, lr, hr, seed);
    if (prior_used) *prior_used = prior;
    return model.forward(lr, prior, /*training=*/false, nullptr, taps);
  }
};

}  // namespace pean::sr
