#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pean/ops_nn.hpp"
#include "pean/rng.hpp"

namespace pean::nn {

// Named parameter registry collected from model structs. Learnable entries
// feed the optimizer and gradient checks; buffers (BN running stats) are
// serialized alongside but never updated by the optimizer.
template <class T>
struct Params {
  std::vector<std::pair<std::string, Var<T>>> learnable;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add(const std::string& name, const Var<T>& v) { learnable.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor<T>* t) { buffers.emplace_back(name, t); }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& [_, v] : learnable) n += v.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [_, v] : learnable) v.zero_grad();
  }
};

template <class T>
Var<T> param(Rng& rng, Shape shape, double bound) {
  return Var<T>(rng.uniform_tensor<T>(std::move(shape), -bound, bound), true);
}

template <class T>
struct Linear {
  Var<T> w, b;

  Linear() = default;
  Linear(Rng& rng, int in, int out, bool bias = true, bool zero_init = false) {
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
    w = param<T>(rng, {in, out}, bound);
    if (bias) b = Var<T>(Tensor<T>::zeros({out}), true);
  }
  Var<T> operator()(const Var<T>& x) const { return affine(x, w, b); }
  void collect(Params<T>& ps, const std::string& p) const {
    ps.add(p + ".w", w);
    if (b.defined()) ps.add(p + ".b", b);
  }
};

template <class T>
struct Conv2d {
  Var<T> w, b;

  Conv2d() = default;
  Conv2d(Rng& rng, int in, int out, int k, bool zero_init = false) {
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in * k * k));
    w = param<T>(rng, {k, k, in, out}, bound);
    b = Var<T>(Tensor<T>::zeros({out}), true);
  }
  Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b); }
  void collect(Params<T>& ps, const std::string& p) const {
    ps.add(p + ".w", w);
    ps.add(p + ".b", b);
  }
};

template <class T>
struct Conv1d {
  Var<T> w, b;

  Conv1d() = default;
  Conv1d(Rng& rng, int in, int out, int k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k));
    w = param<T>(rng, {k, in, out}, bound);
    b = Var<T>(Tensor<T>::zeros({out}), true);
  }
  Var<T> operator()(const Var<T>& x) const { return conv1d(x, w, b); }
  void collect(Params<T>& ps, const std::string& p) const {
    ps.add(p + ".w", w);
    ps.add(p + ".b", b);
  }
};

template <class T>
struct BatchNorm {
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  int channel_axis = -1;  // -1: last axis

  BatchNorm() = default;
  explicit BatchNorm(int channels, int axis = -1) : channel_axis(axis) {
    gamma = Var<T>(Tensor<T>::full({channels}, T(1)), true);
    beta = Var<T>(Tensor<T>::zeros({channels}), true);
    running_mean = Tensor<T>::zeros({channels});
    running_var = Tensor<T>::full({channels}, T(1));
  }
  Var<T> operator()(const Var<T>& x, bool training) {
    const int axis = channel_axis < 0 ? static_cast<int>(x.shape().size()) - 1 : channel_axis;
    return batch_norm(x, gamma, beta, running_mean, running_var, axis, training);
  }
  void collect(Params<T>& ps, const std::string& p) {
    ps.add(p + ".gamma", gamma);
    ps.add(p + ".beta", beta);
    ps.add_buffer(p + ".running_mean", &running_mean);
    ps.add_buffer(p + ".running_var", &running_var);
  }
};

template <class T>
struct LayerNorm {
  Var<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(int channels) {
    gamma = Var<T>(Tensor<T>::full({channels}, T(1)), true);
    beta = Var<T>(Tensor<T>::zeros({channels}), true);
  }
  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
  void collect(Params<T>& ps, const std::string& p) const {
    ps.add(p + ".gamma", gamma);
    ps.add(p + ".beta", beta);
  }
};

// Position-wise feed-forward block used by LAM/GAM: Linear -> Mish -> Linear.
// The second linear starts at zero so the residual wrapper is the identity.
template <class T>
struct Ffn {
  Linear<T> fc1, fc2;

  Ffn() = default;
  Ffn(Rng& rng, int dim, int hidden) : fc1(rng, dim, hidden), fc2(rng, hidden, dim, true, true) {}
  Var<T> operator()(const Var<T>& x) const { return fc2(mish(fc1(x))); }
  void collect(Params<T>& ps, const std::string& p) const {
    fc1.collect(ps, p + ".fc1");
    fc2.collect(ps, p + ".fc2");
  }
};

// One direction of one LSTM layer.
template <class T>
struct LstmCell {
  Var<T> wx, wh, b;  // [in,4H], [H,4H], [4H]
  int hidden = 0;

  LstmCell() = default;
  LstmCell(Rng& rng, int in, int h) : hidden(h) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    wx = param<T>(rng, {in, 4 * h}, bound);
    wh = param<T>(rng, {h, 4 * h}, bound);
    b = param<T>(rng, {4 * h}, bound);
  }
  void collect(Params<T>& ps, const std::string& p) const {
    ps.add(p + ".wx", wx);
    ps.add(p + ".wh", wh);
    ps.add(p + ".b", b);
  }

  // x [B,L,D]; emits hidden states in sequence order of `times`.
  std::vector<Var<T>> run(const Var<T>& x, const std::vector<int>& times) const {
    const int bsz = x.dim(0);
    Var<T> h = Var<T>::constant(Tensor<T>::zeros({bsz, hidden}));
    Var<T> c = Var<T>::constant(Tensor<T>::zeros({bsz, hidden}));
    std::vector<Var<T>> out(times.size());
    for (size_t i = 0; i < times.size(); ++i) {
      Var<T> gates = add(affine(select_time(x, times[i]), wx, b), affine(h, wh));
      Var<T> ig = sigmoid(slice_lastdim(gates, 0, hidden));
      Var<T> fg = sigmoid(slice_lastdim(gates, hidden, 2 * hidden));
      Var<T> gg = tanh_op(slice_lastdim(gates, 2 * hidden, 3 * hidden));
      Var<T> og = sigmoid(slice_lastdim(gates, 3 * hidden, 4 * hidden));
      c = add(mul(fg, c), mul(ig, gg));
      h = mul(og, tanh_op(c));
      out[i] = h;
    }
    return out;
  }
};

// Stacked bidirectional LSTM; output [B,L,2H].
template <class T>
struct BiLstm {
  std::vector<LstmCell<T>> fw, bw;

  BiLstm() = default;
  BiLstm(Rng& rng, int in, int hidden, int layers) {
    for (int l = 0; l < layers; ++l) {
      const int d = l == 0 ? in : 2 * hidden;
      fw.emplace_back(rng, d, hidden);
      bw.emplace_back(rng, d, hidden);
    }
  }
  Var<T> operator()(Var<T> x) const {
    const int l = x.dim(1);
    std::vector<int> order(static_cast<size_t>(l)), rorder(static_cast<size_t>(l));
    for (int t = 0; t < l; ++t) {
      order[static_cast<size_t>(t)] = t;
      rorder[static_cast<size_t>(t)] = l - 1 - t;
    }
    for (size_t layer = 0; layer < fw.size(); ++layer) {
      std::vector<Var<T>> hf = fw[layer].run(x, order);
      std::vector<Var<T>> hb = bw[layer].run(x, rorder);
      std::vector<Var<T>> merged(static_cast<size_t>(l));
      for (int t = 0; t < l; ++t)
        merged[static_cast<size_t>(t)] =
            concat_last(hf[static_cast<size_t>(t)], hb[static_cast<size_t>(l - 1 - t)]);
      x = stack_time(merged);
    }
    return x;
  }
  void collect(Params<T>& ps, const std::string& p) const {
    for (size_t i = 0; i < fw.size(); ++i) {
      fw[i].collect(ps, p + ".l" + std::to_string(i) + ".fw");
      bw[i].collect(ps, p + ".l" + std::to_string(i) + ".bw");
    }
  }
};

}  // namespace pean::nn
