#pragma once

#include <limits>
#include <string>
#include <vector>

#include "pean/charset.hpp"
#include "pean/ops_basic.hpp"

namespace pean::rec {

namespace detail {

template <class T>
constexpr T neg_inf() {
  return -std::numeric_limits<T>::infinity();
}

template <class T>
T logadd(T a, T b) {
  if (a == neg_inf<T>()) return b;
  if (b == neg_inf<T>()) return a;
  const T m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Frames needed for a label: its length plus one blank per repeated pair.
inline int min_frames(const std::vector<int>& label) {
  int need = static_cast<int>(label.size());
  for (size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++need;
  return need;
}

inline std::vector<int> blank_extended(const std::vector<int>& label, int blank) {
  std::vector<int> ext(2 * label.size() + 1, blank);
  for (size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
  return ext;
}

// Row-stable log-softmax of item b of logits [B,L,A] into lp [L*A].
template <class T>
void ctc_logsoftmax(const Tensor<T>& logits, int b, int len, int na, std::vector<T>& lp) {
  lp.resize(static_cast<size_t>(len) * na);
  for (int t = 0; t < len; ++t) {
    const T* row = logits.data() + (static_cast<int64_t>(b) * len + t) * na;
    T m = row[0];
    for (int k = 1; k < na; ++k) m = std::max(m, row[k]);
    T s = 0;
    for (int k = 0; k < na; ++k) s += std::exp(row[k] - m);
    const T lse = m + std::log(s);
    for (int k = 0; k < na; ++k) lp[static_cast<size_t>(t) * na + k] = row[k] - lse;
  }
}

// Forward recursion; alpha[t][s] includes the emission at frame t.
template <class T>
void ctc_alpha(const std::vector<T>& lp, const std::vector<int>& ext, int len, int na, int blank,
               std::vector<T>& alpha) {
  const int ns = static_cast<int>(ext.size());
  alpha.assign(static_cast<size_t>(len) * ns, neg_inf<T>());
  alpha[0] = lp[static_cast<size_t>(ext[0])];
  if (ns > 1) alpha[1] = lp[static_cast<size_t>(ext[1])];
  for (int t = 1; t < len; ++t)
    for (int s = 0; s < ns; ++s) {
      T a = alpha[static_cast<size_t>(t - 1) * ns + s];
      if (s >= 1) a = logadd(a, alpha[static_cast<size_t>(t - 1) * ns + s - 1]);
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        a = logadd(a, alpha[static_cast<size_t>(t - 1) * ns + s - 2]);
      alpha[static_cast<size_t>(t) * ns + s] = a + lp[static_cast<size_t>(t) * na + ext[s]];
    }
}

template <class T>
T ctc_logp(const std::vector<T>& alpha, int len, int ns) {
  T logp = alpha[static_cast<size_t>(len - 1) * ns + ns - 1];
  if (ns > 1) logp = logadd(logp, alpha[static_cast<size_t>(len - 1) * ns + ns - 2]);
  return logp;
}

}  // namespace detail

// CTC negative log-likelihood over blank-augmented alignments, batch mean.
// Takes raw logits [B,L,A]; log-softmax is applied internally and the
// gradient is softmax(logits) minus the alignment posterior.
template <class T>
Var<T> ctc_loss(const Var<T>& logits, const std::vector<std::vector<int>>& labels, int blank = 0) {
  check(logits.shape().size() == 3, "ctc_loss: logits must be [B,L,A]");
  const int bsz = logits.dim(0), len = logits.dim(1), na = logits.dim(2);
  check(static_cast<int>(labels.size()) == bsz, "ctc_loss: batch size mismatch");
  for (const auto& lab : labels) {
    for (int s : lab)
      check(s != blank && s >= 0 && s < na, "ctc_loss: label symbol out of range or blank");
    if (detail::min_frames(lab) > len)
      fail_shape("ctc_loss: label needs " + std::to_string(detail::min_frames(lab)) +
                 " frames but only " + std::to_string(len) + " available");
  }

  T total = 0;
  for (int b = 0; b < bsz; ++b) {
    std::vector<T> lp, alpha;
    detail::ctc_logsoftmax(logits.val(), b, len, na, lp);
    const std::vector<int> ext = detail::blank_extended(labels[static_cast<size_t>(b)], blank);
    detail::ctc_alpha(lp, ext, len, na, blank, alpha);
    const T logp = detail::ctc_logp(alpha, len, static_cast<int>(ext.size()));
    if (!is_finite(logp)) fail_numeric("ctc_loss: alignment probability underflow");
    total += -logp;
  }

  const T mean = total / static_cast<T>(bsz);
  return make_op<T>(Tensor<T>::scalar(mean), {logits}, [labels, blank, bsz, len, na](Node<T>& n) {
    const T kNegInf = detail::neg_inf<T>();
    const Tensor<T>& lg = n.parents[0]->value;
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const T upstream = n.grad[0] / static_cast<T>(bsz);
    for (int b = 0; b < bsz; ++b) {
      std::vector<T> lp, alpha;
      detail::ctc_logsoftmax(lg, b, len, na, lp);
      const std::vector<int> ext = detail::blank_extended(labels[static_cast<size_t>(b)], blank);
      const int ns = static_cast<int>(ext.size());
      detail::ctc_alpha(lp, ext, len, na, blank, alpha);
      // beta with the same emission convention as alpha
      std::vector<T> beta(static_cast<size_t>(len) * ns, kNegInf);
      beta[static_cast<size_t>(len - 1) * ns + ns - 1] =
          lp[static_cast<size_t>(len - 1) * na + ext[static_cast<size_t>(ns - 1)]];
      if (ns > 1)
        beta[static_cast<size_t>(len - 1) * ns + ns - 2] =
            lp[static_cast<size_t>(len - 1) * na + ext[static_cast<size_t>(ns - 2)]];
      for (int t = len - 2; t >= 0; --t)
        for (int s = ns - 1; s >= 0; --s) {
          T v = beta[static_cast<size_t>(t + 1) * ns + s];
          if (s + 1 < ns) v = detail::logadd(v, beta[static_cast<size_t>(t + 1) * ns + s + 1]);
          if (s + 2 < ns && ext[static_cast<size_t>(s + 2)] != blank &&
              ext[static_cast<size_t>(s + 2)] != ext[static_cast<size_t>(s)])
            v = detail::logadd(v, beta[static_cast<size_t>(t + 1) * ns + s + 2]);
          beta[static_cast<size_t>(t) * ns + s] =
              v + lp[static_cast<size_t>(t) * na + ext[static_cast<size_t>(s)]];
        }
      const T logp = detail::ctc_logp(alpha, len, ns);
      // dL/dlogit[t,k] = softmax(logit)[t,k] - posterior of states emitting k
      for (int t = 0; t < len; ++t) {
        std::vector<T> post(static_cast<size_t>(na), kNegInf);
        for (int s = 0; s < ns; ++s) {
          const int sym = ext[static_cast<size_t>(s)];
          const T v = alpha[static_cast<size_t>(t) * ns + s] +
                      beta[static_cast<size_t>(t) * ns + s] -
                      lp[static_cast<size_t>(t) * na + sym];
          post[static_cast<size_t>(sym)] = detail::logadd(post[static_cast<size_t>(sym)], v);
        }
        for (int k = 0; k < na; ++k) {
          const T y = std::exp(lp[static_cast<size_t>(t) * na + k]);
          const T gamma = post[static_cast<size_t>(k)] == kNegInf
                              ? T(0)
                              : std::exp(post[static_cast<size_t>(k)] - logp);
          g[(static_cast<int64_t>(b) * len + t) * na + k] += upstream * (y - gamma);
        }
      }
    }
  });
}

// Single-item convenience: logits [L,A].
template <class T>
Var<T> ctc_loss_single(const Var<T>& logits, const std::vector<int>& label, int blank = 0) {
  Var<T> batched = reshape(logits, Shape{1, logits.dim(0), logits.dim(1)});
  return ctc_loss(batched, std::vector<std::vector<int>>{label}, blank);
}

// Greedy decode: per-frame argmax, collapse repeats, drop blanks.
template <class T>
std::string ctc_greedy_decode(const Tensor<T>& probs, int blank = 0) {
  check(probs.ndim() == 2, "ctc_greedy_decode: expected [L,A]");
  const int len = probs.dim(0), na = probs.dim(1);
  std::string out;
  int prev = -1;
  for (int t = 0; t < len; ++t) {
    int best = 0;
    for (int k = 1; k < na; ++k)
      if (probs.at(t, k) > probs.at(t, best)) best = k;
    if (best != blank && best != prev) out.push_back(Charset::char_at(best));
    prev = best;
  }
  return out;
}

}  // namespace pean::rec
