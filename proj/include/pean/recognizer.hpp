#pragma once

#include "pean/charset.hpp"
#include "pean/ctc.hpp"
#include "pean/nn.hpp"

namespace pean::rec {

// Sequence length of every prior/probability sequence in the pipeline.
constexpr int kSeqLen = 26;

struct RecognizerConfig {
  // 6 conv stages, CRNN-style; pools fixed as {2x2, 2x2, 2x1, 2x1, -, -}
  // for the canonical 32x128 input, then adaptive width pooling to 26.
  std::vector<int> channels = {32, 48, 64, 64, 96, 96};
  int lstm_hidden = 96;
  int lstm_layers = 2;
};

// CNN-BiLSTM CTC recognizer. Accepts 16x64 (upsampled internally) or
// 32x128 images and emits a [B,26,37] sequence.
template <class T>
struct Recognizer {
  RecognizerConfig cfg;
  std::vector<nn::Conv2d<T>> convs;
  std::vector<nn::BatchNorm<T>> bns;
  nn::BiLstm<T> lstm;
  nn::Linear<T> head;

  Recognizer() = default;
  Recognizer(Rng& rng, RecognizerConfig config) : cfg(std::move(config)) {
    check(cfg.channels.size() == 6, "recognizer: exactly 6 conv stages");
    int in = 3;
    for (int c : cfg.channels) {
      convs.emplace_back(rng, in, c, 3);
      bns.emplace_back(c);
      in = c;
    }
    lstm = nn::BiLstm<T>(rng, in, cfg.lstm_hidden, cfg.lstm_layers);
    head = nn::Linear<T>(rng, 2 * cfg.lstm_hidden, Charset::kSize);
  }

  Var<T> logits(Var<T> images, bool training) {
    check(images.shape().size() == 4 && images.dim(3) == 3,
          "recognizer: expected [B,H,W,3] image batch");
    if (images.dim(1) == 16 && images.dim(2) == 64) images = upsample2x_nearest(images);
    check(images.dim(1) == 32 && images.dim(2) == 128,
          "recognizer: unsupported input size " + shape_str(images.shape()));
    Var<T> x = images;
    for (size_t i = 0; i < convs.size(); ++i) {
      x = mish(bns[i](convs[i](x), training));
      if (i == 0 || i == 1) x = avg_pool2d(x, 2, 2);
      if (i == 2 || i == 3) x = avg_pool2d(x, 2, 1);
    }
    x = adaptive_avg_pool_w(x, kSeqLen);  // [B,2,26,C]
    x = collapse_mean_h(x);               // [B,26,C]
    return head(lstm(x));                 // [B,26,37]
  }

  // Row-stochastic recognition probability sequence (P^l / P^h).
  Var<T> recognize(const Var<T>& images, bool training = false) {
    return softmax_lastdim(logits(images, training));
  }

  void collect(nn::Params<T>& ps, const std::string& p) {
    for (size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(ps, p + ".conv" + std::to_string(i));
      bns[i].collect(ps, p + ".bn" + std::to_string(i));
    }
    lstm.collect(ps, p + ".lstm");
    head.collect(ps, p + ".head");
  }
};

// ARM: same CNN-BiLSTM template, but consuming the C1-channel feature map
// [B,16,64,C1] produced by the last AMM block (paper keeps 6 convs here).
template <class T>
struct ArmHead {
  std::vector<nn::Conv2d<T>> convs;
  std::vector<nn::BatchNorm<T>> bns;
  nn::BiLstm<T> lstm;
  nn::Linear<T> head;
  mutable int64_t forward_count = 0;  // instrumentation for the inference contract

  ArmHead() = default;
  ArmHead(Rng& rng, int in_channels, const std::vector<int>& channels, int lstm_hidden) {
    check(channels.size() == 6, "arm: exactly 6 conv stages");
    int in = in_channels;
    for (int c : channels) {
      convs.emplace_back(rng, in, c, 3);
      bns.emplace_back(c);
      in = c;
    }
    lstm = nn::BiLstm<T>(rng, in, lstm_hidden, 2);
    head = nn::Linear<T>(rng, 2 * lstm_hidden, Charset::kSize);
  }

  // feature [B,16,64,C1] -> logits [B,26,37]
  Var<T> operator()(const Var<T>& feature, bool training) {
    ++forward_count;
    check(feature.dim(1) == 16 && feature.dim(2) == 64, "arm: expected a 16x64 feature map");
    Var<T> x = feature;
    for (size_t i = 0; i < convs.size(); ++i) {
      x = mish(bns[i](convs[i](x), training));
      if (i == 0) x = avg_pool2d(x, 2, 2);
      if (i == 1 || i == 2 || i == 3) x = avg_pool2d(x, 2, 1);
    }
    x = adaptive_avg_pool_w(x, kSeqLen);  // [B,1,26,C]
    x = collapse_mean_h(x);               // [B,26,C]
    return head(lstm(x));
  }

  void collect(nn::Params<T>& ps, const std::string& p) {
    for (size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(ps, p + ".conv" + std::to_string(i));
      bns[i].collect(ps, p + ".bn" + std::to_string(i));
    }
    lstm.collect(ps, p + ".lstm");
    head.collect(ps, p + ".head");
  }
};

}  // namespace pean::rec
