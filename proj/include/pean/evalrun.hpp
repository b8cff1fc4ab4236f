#pragma once

#include "pean/evalkit.hpp"
#include "pean/srnet.hpp"

namespace pean::evalkit {

template <class T>
std::vector<std::string> decode_batch(const Tensor<T>& probs) {
  const int b = probs.dim(0), l = probs.dim(1), a = probs.dim(2);
  std::vector<std::string> out;
  for (int i = 0; i < b; ++i) {
    Tensor<T> item(Shape{l, a});
    std::copy_n(probs.data() + static_cast<int64_t>(i) * l * a, static_cast<int64_t>(l) * a,
                item.data());
    out.push_back(rec::ctc_greedy_decode(item));
  }
  return out;
}

struct FullEval {
  EvalReport sr;        // SR output decoded by the frozen evaluator
  EvalReport bicubic;   // bicubic-upsampled LR baseline
  EvalReport lr_direct; // evaluator applied to the raw LR
  EvalReport hr_upper;  // evaluator applied to the ground-truth HR
  std::string prior;
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"prior", prior},
            {"seed", seed},
            {"sr", sr.to_json()},
            {"bicubic", bicubic.to_json()},
            {"lr_direct", lr_direct.to_json()},
            {"hr_upper", hr_upper.to_json()}};
  }
};

// Runs SR over the test split under the given prior source and decodes
// everything with the frozen evaluator recognizer.
template <class T>
FullEval run_eval(sr::PeanSystem<T>& sys, const std::vector<Sample>& test,
                  sr::PriorSource source, uint64_t seed, int batch = 25,
                  std::vector<Image>* sr_images = nullptr) {
  NoGradGuard ng;
  check(!test.empty(), "run_eval: empty test set");
  FullEval ev;
  ev.prior = sr::prior_source_name(source);
  ev.seed = seed;
  std::vector<std::string> pred_sr, pred_bi, pred_lr, pred_hr, labels;
  std::vector<Difficulty> diffs;
  double psnr_sum = 0, ssim_sum = 0;

  for (size_t off = 0; off < test.size(); off += static_cast<size_t>(batch)) {
    const size_t hi = std::min(test.size(), off + static_cast<size_t>(batch));
    std::vector<Image> lrs, hrs, bis;
    for (size_t i = off; i < hi; ++i) {
      lrs.push_back(test[i].lr);
      hrs.push_back(test[i].hr);
      bis.push_back(bicubic_upsample2x(test[i].lr));
      labels.push_back(test[i].text);
      diffs.push_back(test[i].difficulty);
    }
    Var<T> lr_in = Var<T>::constant(images_to_tensor<float>(lrs).template cast<T>());
    Var<T> hr_in = Var<T>::constant(images_to_tensor<float>(hrs).template cast<T>());
    Var<T> bi_in = Var<T>::constant(images_to_tensor<float>(bis).template cast<T>());

    const uint64_t batch_seed = Rng(seed).fork(off).next_u64();
    Var<T> sr_out = sys.run(lr_in, hr_in, source, batch_seed);
    Tensor<T> sr_val = sr_out.detach();

    for (auto& s : decode_batch(sys.tpg.recognize(sr_out).detach())) pred_sr.push_back(s);
    for (auto& s : decode_batch(sys.tpg.recognize(bi_in).detach())) pred_bi.push_back(s);
    for (auto& s : decode_batch(sys.tpg.recognize(lr_in).detach())) pred_lr.push_back(s);
    for (auto& s : decode_batch(sys.tpg.recognize(hr_in).detach())) pred_hr.push_back(s);

    for (size_t i = off; i < hi; ++i) {
      Image sr_img = tensor_to_image(sr_val, static_cast<int>(i - off));
      psnr_sum += psnr(sr_img, test[i].hr);
      ssim_sum += ssim(sr_img, test[i].hr);
      if (sr_images) sr_images->push_back(std::move(sr_img));
    }
  }

  ev.sr = accuracy(pred_sr, labels, diffs);
  ev.bicubic = accuracy(pred_bi, labels, diffs);
  ev.lr_direct = accuracy(pred_lr, labels, diffs);
  ev.hr_upper = accuracy(pred_hr, labels, diffs);
  ev.sr.psnr_mean = psnr_sum / static_cast<double>(test.size());
  ev.sr.ssim_mean = ssim_sum / static_cast<double>(test.size());
  return ev;
}

// Collects the tapped activations of one system/prior combination:
// taps[layer][sample], each tap a per-sample [H,W,C] tensor.
template <class T>
std::vector<std::vector<Tensor<float>>> collect_taps(sr::PeanSystem<T>& sys,
                                                     const std::vector<Sample>& samples,
                                                     sr::PriorSource source, uint64_t seed,
                                                     int batch = 25) {
  NoGradGuard ng;
  std::vector<std::vector<Tensor<float>>> layers(
      static_cast<size_t>(sys.model.tap_count()));
  for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(batch)) {
    const size_t hi = std::min(samples.size(), off + static_cast<size_t>(batch));
    std::vector<Image> lrs, hrs;
    for (size_t i = off; i < hi; ++i) {
      lrs.push_back(samples[i].lr);
      hrs.push_back(samples[i].hr);
    }
    Var<T> lr_in = Var<T>::constant(images_to_tensor<float>(lrs).template cast<T>());
    Var<T> hr_in = Var<T>::constant(images_to_tensor<float>(hrs).template cast<T>());
    std::vector<Tensor<T>> taps;
    (void)sys.run(lr_in, hr_in, source, Rng(seed).fork(off).next_u64(), &taps);
    check(static_cast<int>(taps.size()) == sys.model.tap_count(), "collect_taps: tap count");
    for (size_t l = 0; l < taps.size(); ++l) {
      const Tensor<T>& t = taps[l];
      Shape item_shape(t.shape().begin() + 1, t.shape().end());
      const int64_t item = shape_numel(item_shape);
      for (int b = 0; b < t.dim(0); ++b) {
        Tensor<float> slice(item_shape);
        for (int64_t i = 0; i < item; ++i)
          slice[i] = static_cast<float>(t[static_cast<int64_t>(b) * item + i]);
        layers[l].push_back(std::move(slice));
      }
    }
  }
  return layers;
}

// Matched- and cross-layer CKA between two (model, prior) combinations over
// the test split. n_max > 0 subsamples with the given seed.
template <class T>
CkaResult cka_study(sr::PeanSystem<T>& sys_a, sr::PeanSystem<T>& sys_b,
                    const std::vector<Sample>& samples, sr::PriorSource source_a,
                    sr::PriorSource source_b, uint64_t seed, int n_max = 0) {
  check(sys_a.model.tap_count() == sys_b.model.tap_count(),
        "cka_study: models expose different tap topologies");
  std::vector<Sample> subset = samples;
  if (n_max > 0 && static_cast<int>(subset.size()) > n_max) {
    std::vector<int> idx(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng = Rng(seed).fork(0xCCA);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    subset.clear();
    for (int i = 0; i < n_max; ++i) subset.push_back(samples[static_cast<size_t>(idx[i])]);
  }
  auto taps_a = collect_taps(sys_a, subset, source_a, seed);
  auto taps_b = collect_taps(sys_b, subset, source_b, seed);
  return cka_compare(taps_a, taps_b, 2 * sys_a.model.cfg.amm.n_blocks);
}

}  // namespace pean::evalkit
