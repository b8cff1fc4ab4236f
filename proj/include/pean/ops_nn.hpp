#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pean/ops_basic.hpp"

namespace pean {

// ---- 2-D convolution, stride 1, "same" padding, channel-last ----

namespace detail {

template <class T>
void im2col_same(const T* x, int h, int w, int c, int kh, int kw, T* col) {
  const int ph = kh / 2, pw = kw / 2;
  int64_t idx = 0;
  for (int y = 0; y < h; ++y)
    for (int xw = 0; xw < w; ++xw)
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = y + ky - ph;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = xw + kx - pw;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            for (int ci = 0; ci < c; ++ci) col[idx++] = T(0);
          } else {
            const T* src = x + (static_cast<int64_t>(sy) * w + sx) * c;
            for (int ci = 0; ci < c; ++ci) col[idx++] = src[ci];
          }
        }
      }
}

template <class T>
void col2im_same_add(const T* col, int h, int w, int c, int kh, int kw, T* gx) {
  const int ph = kh / 2, pw = kw / 2;
  int64_t idx = 0;
  for (int y = 0; y < h; ++y)
    for (int xw = 0; xw < w; ++xw)
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = y + ky - ph;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = xw + kx - pw;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            idx += c;
          } else {
            T* dst = gx + (static_cast<int64_t>(sy) * w + sx) * c;
            for (int ci = 0; ci < c; ++ci) dst[ci] += col[idx++];
          }
        }
      }
}

}  // namespace detail

// x [B,H,W,Cin], w [kh,kw,Cin,Cout], b [Cout] (optional). Odd kernels only.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  check(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: rank");
  const int bs = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  check(w.dim(2) == ci, "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d: odd kernels only");
  const int64_t hw = static_cast<int64_t>(h) * wd;
  const int64_t kcc = static_cast<int64_t>(kh) * kw * ci;
  Tensor<T> out(Shape{bs, h, wd, co});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int ib = 0; ib < bs; ++ib) {
    std::vector<T> col(static_cast<size_t>(hw * kcc));
    detail::im2col_same(x.val().data() + ib * hw * ci, h, wd, ci, kh, kw, col.data());
    gemm<T>(false, false, hw, co, kcc, col.data(), w.val().data(), out.data() + ib * hw * co);
  }
  if (b.defined()) {
    check(b.dim(0) == co, "conv2d: bias dim mismatch");
    for (int64_t r = 0; r < static_cast<int64_t>(bs) * hw; ++r)
      for (int j = 0; j < co; ++j) out[r * co + j] += b.val()[j];
  }
  std::vector<Var<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_op<T>(std::move(out), parents, [bs, h, wd, ci, kh, kw, co, hw, kcc, has_bias](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& wv = n.parents[1]->value;
    const bool need_x = n.parents[0]->requires_grad;
    const bool need_w = n.parents[1]->requires_grad;
    Tensor<T>* gx = need_x ? &n.parents[0]->ensure_grad() : nullptr;
    Tensor<T>* gw = need_w ? &n.parents[1]->ensure_grad() : nullptr;
#ifdef _OPENMP
    const int nthreads = omp_get_max_threads();
#else
    const int nthreads = 1;
#endif
    std::vector<Tensor<T>> gw_part;
    if (need_w)
      for (int i = 0; i < nthreads; ++i) gw_part.emplace_back(Shape{kh, kw, ci, co});
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads)
#endif
    for (int ib = 0; ib < bs; ++ib) {
#ifdef _OPENMP
      const int tid = omp_get_thread_num();
#else
      const int tid = 0;
#endif
      std::vector<T> col(static_cast<size_t>(hw * kcc));
      detail::im2col_same(xv.data() + ib * hw * ci, h, wd, ci, kh, kw, col.data());
      if (need_w)
        gemm<T>(true, false, kcc, co, hw, col.data(), n.grad.data() + ib * hw * co,
                gw_part[static_cast<size_t>(tid)].data(), true);
      if (need_x) {
        std::vector<T> gcol(static_cast<size_t>(hw * kcc));
        gemm<T>(false, true, hw, kcc, co, n.grad.data() + ib * hw * co, wv.data(), gcol.data());
        detail::col2im_same_add(gcol.data(), h, wd, ci, kh, kw, gx->data() + ib * hw * ci);
      }
    }
    if (need_w)
      for (int t = 0; t < nthreads; ++t)
        for (int64_t i = 0; i < gw->numel(); ++i) (*gw)[i] += gw_part[static_cast<size_t>(t)][i];
    if (has_bias && n.parents[2]->requires_grad) {
      Tensor<T>& gb = n.parents[2]->ensure_grad();
      for (int64_t r = 0; r < static_cast<int64_t>(bs) * hw; ++r)
        for (int j = 0; j < co; ++j) gb[j] += n.grad[r * co + j];
    }
  });
}

// ---- 1-D convolution over the trailing axis, channels at dim 1 ----
// x [B,Cin,L], w [k,Cin,Cout], b [Cout]; "same" padding, odd k.
template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  check(x.shape().size() == 3 && w.shape().size() == 3, "conv1d: rank");
  const int bs = x.dim(0), ci = x.dim(1), l = x.dim(2);
  const int k = w.dim(0), co = w.dim(2);
  check(w.dim(1) == ci, "conv1d: channel mismatch");
  check(k % 2 == 1, "conv1d: odd kernel only");
  const int p = k / 2;
  Tensor<T> out(Shape{bs, co, l});
  for (int ib = 0; ib < bs; ++ib)
    for (int oc = 0; oc < co; ++oc)
      for (int t = 0; t < l; ++t) {
        T s = b.defined() ? b.val()[oc] : T(0);
        for (int kk = 0; kk < k; ++kk) {
          const int st = t + kk - p;
          if (st < 0 || st >= l) continue;
          for (int ic = 0; ic < ci; ++ic)
            s += x.val().at(ib, ic, st) * w.val().at(kk, ic, oc);
        }
        out.at(ib, oc, t) = s;
      }
  std::vector<Var<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_op<T>(std::move(out), parents, [bs, ci, l, k, co, p, has_bias](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& wv = n.parents[1]->value;
    const bool need_x = n.parents[0]->requires_grad;
    const bool need_w = n.parents[1]->requires_grad;
    Tensor<T>* gx = need_x ? &n.parents[0]->ensure_grad() : nullptr;
    Tensor<T>* gw = need_w ? &n.parents[1]->ensure_grad() : nullptr;
    for (int ib = 0; ib < bs; ++ib)
      for (int oc = 0; oc < co; ++oc)
        for (int t = 0; t < l; ++t) {
          const T go = n.grad.at(ib, oc, t);
          for (int kk = 0; kk < k; ++kk) {
            const int st = t + kk - p;
            if (st < 0 || st >= l) continue;
            for (int ic = 0; ic < ci; ++ic) {
              if (need_x) gx->at(ib, ic, st) += go * wv.at(kk, ic, oc);
              if (need_w) gw->at(kk, ic, oc) += go * xv.at(ib, ic, st);
            }
          }
        }
    if (has_bias && n.parents[2]->requires_grad) {
      Tensor<T>& gb = n.parents[2]->ensure_grad();
      for (int ib = 0; ib < bs; ++ib)
        for (int oc = 0; oc < co; ++oc)
          for (int t = 0; t < l; ++t) gb[oc] += n.grad.at(ib, oc, t);
    }
  });
}

// ---- batch normalization ----
// Normalizes per channel (channel_axis) across all other axes. Training mode
// uses batch statistics and updates the running buffers in place; eval mode
// is a deterministic affine map of the running statistics.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, int channel_axis,
                  bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& s = x.shape();
  const int c = s[static_cast<size_t>(channel_axis)];
  check(gamma.numel() == c && beta.numel() == c && running_mean.numel() == c &&
            running_var.numel() == c,
        "batch_norm: channel param mismatch");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < channel_axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(channel_axis) + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t cnt = outer * inner;

  std::vector<T> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
  if (training) {
    check(cnt > 1, "batch_norm: need more than one sample per channel in training mode");
    for (int ch = 0; ch < c; ++ch) {
      T m = 0;
      for (int64_t o = 0; o < outer; ++o) {
        const T* p = x.val().data() + (o * c + ch) * inner;
        for (int64_t i = 0; i < inner; ++i) m += p[i];
      }
      m /= static_cast<T>(cnt);
      T v = 0;
      for (int64_t o = 0; o < outer; ++o) {
        const T* p = x.val().data() + (o * c + ch) * inner;
        for (int64_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<T>(cnt);
      mean[static_cast<size_t>(ch)] = m;
      invstd[static_cast<size_t>(ch)] = T(1) / std::sqrt(v + eps);
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * m;
      const T unbiased = v * static_cast<T>(cnt) / static_cast<T>(cnt - 1);
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = running_mean[ch];
      invstd[static_cast<size_t>(ch)] = T(1) / std::sqrt(running_var[ch] + eps);
    }
  }

  Tensor<T> out(s);
  for (int64_t o = 0; o < outer; ++o)
    for (int ch = 0; ch < c; ++ch) {
      const T* p = x.val().data() + (o * c + ch) * inner;
      T* q = out.data() + (o * c + ch) * inner;
      const T g = gamma.val()[ch], bi = beta.val()[ch];
      const T m = mean[static_cast<size_t>(ch)], is = invstd[static_cast<size_t>(ch)];
      for (int64_t i = 0; i < inner; ++i) q[i] = g * (p[i] - m) * is + bi;
    }

  return make_op<T>(std::move(out), {x, gamma, beta},
                    [outer, inner, c, cnt, mean, invstd, training](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& gv = n.parents[1]->value;
    const bool need_x = n.parents[0]->requires_grad;
    Tensor<T>* gx = need_x ? &n.parents[0]->ensure_grad() : nullptr;
    Tensor<T>* gg = n.parents[1]->requires_grad ? &n.parents[1]->ensure_grad() : nullptr;
    Tensor<T>* gb = n.parents[2]->requires_grad ? &n.parents[2]->ensure_grad() : nullptr;
    for (int ch = 0; ch < c; ++ch) {
      const T m = mean[static_cast<size_t>(ch)], is = invstd[static_cast<size_t>(ch)];
      const T g = gv[ch];
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t o = 0; o < outer; ++o) {
        const T* px = xv.data() + (o * c + ch) * inner;
        const T* pg = n.grad.data() + (o * c + ch) * inner;
        for (int64_t i = 0; i < inner; ++i) {
          sum_dy += pg[i];
          sum_dy_xhat += pg[i] * (px[i] - m) * is;
        }
      }
      if (gg) (*gg)[ch] += sum_dy_xhat;
      if (gb) (*gb)[ch] += sum_dy;
      if (need_x) {
        if (training) {
          const T inv_cnt = T(1) / static_cast<T>(cnt);
          for (int64_t o = 0; o < outer; ++o) {
            const T* px = xv.data() + (o * c + ch) * inner;
            const T* pg = n.grad.data() + (o * c + ch) * inner;
            T* pgx = gx->data() + (o * c + ch) * inner;
            for (int64_t i = 0; i < inner; ++i) {
              const T xhat = (px[i] - m) * is;
              pgx[i] += g * is * (pg[i] - inv_cnt * sum_dy - inv_cnt * xhat * sum_dy_xhat);
            }
          }
        } else {
          for (int64_t o = 0; o < outer; ++o) {
            const T* pg = n.grad.data() + (o * c + ch) * inner;
            T* pgx = gx->data() + (o * c + ch) * inner;
            for (int64_t i = 0; i < inner; ++i) pgx[i] += g * is * pg[i];
          }
        }
      }
    }
  });
}

// ---- layer normalization over the last axis ----
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const int c = x.shape().back();
  check(gamma.numel() == c && beta.numel() == c, "layer_norm: param mismatch");
  const int64_t rows = x.numel() / c;
  std::vector<T> mean(static_cast<size_t>(rows)), invstd(static_cast<size_t>(rows));
  Tensor<T> out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* p = x.val().data() + r * c;
    T m = 0;
    for (int j = 0; j < c; ++j) m += p[j];
    m /= static_cast<T>(c);
    T v = 0;
    for (int j = 0; j < c; ++j) v += (p[j] - m) * (p[j] - m);
    v /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(v + eps);
    mean[static_cast<size_t>(r)] = m;
    invstd[static_cast<size_t>(r)] = is;
    T* q = out.data() + r * c;
    for (int j = 0; j < c; ++j) q[j] = gamma.val()[j] * (p[j] - m) * is + beta.val()[j];
  }
  return make_op<T>(std::move(out), {x, gamma, beta}, [rows, c, mean, invstd](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& gv = n.parents[1]->value;
    const bool need_x = n.parents[0]->requires_grad;
    Tensor<T>* gx = need_x ? &n.parents[0]->ensure_grad() : nullptr;
    Tensor<T>* gg = n.parents[1]->requires_grad ? &n.parents[1]->ensure_grad() : nullptr;
    Tensor<T>* gb = n.parents[2]->requires_grad ? &n.parents[2]->ensure_grad() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const T* px = xv.data() + r * c;
      const T* pg = n.grad.data() + r * c;
      const T m = mean[static_cast<size_t>(r)], is = invstd[static_cast<size_t>(r)];
      T s1 = 0, s2 = 0;
      for (int j = 0; j < c; ++j) {
        const T xhat = (px[j] - m) * is;
        const T dxh = pg[j] * gv[j];
        s1 += dxh;
        s2 += dxh * xhat;
        if (gg) (*gg)[j] += pg[j] * xhat;
        if (gb) (*gb)[j] += pg[j];
      }
      if (need_x) {
        const T invc = T(1) / static_cast<T>(c);
        T* pgx = gx->data() + r * c;
        for (int j = 0; j < c; ++j) {
          const T xhat = (px[j] - m) * is;
          const T dxh = pg[j] * gv[j];
          pgx[j] += is * (dxh - invc * s1 - invc * xhat * s2);
        }
      }
    }
  });
}

// ---- pooling / resampling ----

// Non-overlapping average pooling; H % kh == 0, W % kw == 0.
template <class T>
Var<T> avg_pool2d(const Var<T>& x, int kh, int kw) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check(h % kh == 0 && w % kw == 0, "avg_pool2d: extent not divisible by kernel");
  const int oh = h / kh, ow = w / kw;
  const T inv = T(1) / static_cast<T>(kh * kw);
  Tensor<T> out(Shape{b, oh, ow, c});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 0; y < oh; ++y)
      for (int xw = 0; xw < ow; ++xw)
        for (int ic = 0; ic < c; ++ic) {
          T s = 0;
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) s += x.val().at(ib, y * kh + dy, xw * kw + dx, ic);
          out.at(ib, y, xw, ic) = s * inv;
        }
  return make_op<T>(std::move(out), {x}, [b, oh, ow, c, kh, kw, inv](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int y = 0; y < oh; ++y)
        for (int xw = 0; xw < ow; ++xw)
          for (int ic = 0; ic < c; ++ic) {
            const T go = n.grad.at(ib, y, xw, ic) * inv;
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) g.at(ib, y * kh + dy, xw * kw + dx, ic) += go;
          }
  });
}

// Adaptive average pooling of the width axis to out_w (PyTorch bin rule).
template <class T>
Var<T> adaptive_avg_pool_w(const Var<T>& x, int out_w) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<int> lo(static_cast<size_t>(out_w)), hi(static_cast<size_t>(out_w));
  for (int i = 0; i < out_w; ++i) {
    lo[static_cast<size_t>(i)] = static_cast<int>(static_cast<int64_t>(i) * w / out_w);
    hi[static_cast<size_t>(i)] = static_cast<int>((static_cast<int64_t>(i + 1) * w + out_w - 1) / out_w);
  }
  Tensor<T> out(Shape{b, h, out_w, c});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 0; y < h; ++y)
      for (int i = 0; i < out_w; ++i) {
        const T inv = T(1) / static_cast<T>(hi[static_cast<size_t>(i)] - lo[static_cast<size_t>(i)]);
        for (int ic = 0; ic < c; ++ic) {
          T s = 0;
          for (int xw = lo[static_cast<size_t>(i)]; xw < hi[static_cast<size_t>(i)]; ++xw)
            s += x.val().at(ib, y, xw, ic);
          out.at(ib, y, i, ic) = s * inv;
        }
      }
  return make_op<T>(std::move(out), {x}, [b, h, out_w, c, lo, hi](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int y = 0; y < h; ++y)
        for (int i = 0; i < out_w; ++i) {
          const T inv = T(1) / static_cast<T>(hi[static_cast<size_t>(i)] - lo[static_cast<size_t>(i)]);
          for (int ic = 0; ic < c; ++ic) {
            const T go = n.grad.at(ib, y, i, ic) * inv;
            for (int xw = lo[static_cast<size_t>(i)]; xw < hi[static_cast<size_t>(i)]; ++xw)
              g.at(ib, y, xw, ic) += go;
          }
        }
  });
}

// [B,H,W,C] -> [B,W,C], mean over height.
template <class T>
Var<T> collapse_mean_h(const Var<T>& x) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const T inv = T(1) / static_cast<T>(h);
  Tensor<T> out(Shape{b, w, c});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 0; y < h; ++y)
      for (int xw = 0; xw < w; ++xw)
        for (int ic = 0; ic < c; ++ic) out.at(ib, xw, ic) += x.val().at(ib, y, xw, ic) * inv;
  return make_op<T>(std::move(out), {x}, [b, h, w, c, inv](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int y = 0; y < h; ++y)
        for (int xw = 0; xw < w; ++xw)
          for (int ic = 0; ic < c; ++ic) g.at(ib, y, xw, ic) += n.grad.at(ib, xw, ic) * inv;
  });
}

template <class T>
Var<T> upsample2x_nearest(const Var<T>& x) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor<T> out(Shape{b, 2 * h, 2 * w, c});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 0; y < 2 * h; ++y)
      for (int xw = 0; xw < 2 * w; ++xw)
        for (int ic = 0; ic < c; ++ic) out.at(ib, y, xw, ic) = x.val().at(ib, y / 2, xw / 2, ic);
  return make_op<T>(std::move(out), {x}, [b, h, w, c](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int y = 0; y < 2 * h; ++y)
        for (int xw = 0; xw < 2 * w; ++xw)
          for (int ic = 0; ic < c; ++ic) g.at(ib, y / 2, xw / 2, ic) += n.grad.at(ib, y, xw, ic);
  });
}

// ---- PixelShuffle ----
// out[b, y*r+dy, x*r+dx, c] = in[b, y, x, c*r*r + dy*r + dx]
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  check(r >= 1, "pixel_shuffle: r must be >= 1");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  if (cin % (r * r) != 0)
    fail_shape("pixel_shuffle: channels " + std::to_string(cin) + " not divisible by r^2=" +
               std::to_string(r * r));
  const int c = cin / (r * r);
  Tensor<T> out(Shape{b, h * r, w * r, c});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 0; y < h; ++y)
      for (int xw = 0; xw < w; ++xw)
        for (int ic = 0; ic < c; ++ic)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              out.at(ib, y * r + dy, xw * r + dx, ic) =
                  x.val().at(ib, y, xw, ic * r * r + dy * r + dx);
  return make_op<T>(std::move(out), {x}, [b, h, w, c, r](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int y = 0; y < h; ++y)
        for (int xw = 0; xw < w; ++xw)
          for (int ic = 0; ic < c; ++ic)
            for (int dy = 0; dy < r; ++dy)
              for (int dx = 0; dx < r; ++dx)
                g.at(ib, y, xw, ic * r * r + dy * r + dx) +=
                    n.grad.at(ib, y * r + dy, xw * r + dx, ic);
  });
}

template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, int r) {
  check(r >= 1, "pixel_unshuffle: r must be >= 1");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check(h % r == 0 && w % r == 0, "pixel_unshuffle: spatial dims not divisible by r");
  const int oh = h / r, ow = w / r;
  Tensor<T> out(Shape{b, oh, ow, c * r * r});
  for (int ib = 0; ib < b; ++ib)
    for (int y = 0; y < oh; ++y)
      for (int xw = 0; xw < ow; ++xw)
        for (int ic = 0; ic < c; ++ic)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              out.at(ib, y, xw, ic * r * r + dy * r + dx) =
                  x.val().at(ib, y * r + dy, xw * r + dx, ic);
  return make_op<T>(std::move(out), {x}, [b, oh, ow, c, r](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int y = 0; y < oh; ++y)
        for (int xw = 0; xw < ow; ++xw)
          for (int ic = 0; ic < c; ++ic)
            for (int dy = 0; dy < r; ++dy)
              for (int dx = 0; dx < r; ++dx)
                g.at(ib, y * r + dy, xw * r + dx, ic) +=
                    n.grad.at(ib, y, xw, ic * r * r + dy * r + dx);
  });
}

// ---- scaled dot-product attention over independent strips ----
// Q: s strips of [nq,dk], K: [nk,dk], V: [nk,dv], all flattened row-major.
// out_shape must hold s*nq*dv elements. Softmax rows sum to one per query.
template <class T>
Var<T> strip_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int s, int nq, int nk,
                       int dk, int dv, Shape out_shape) {
  check(q.numel() == static_cast<int64_t>(s) * nq * dk, "strip_attention: Q size");
  check(k.numel() == static_cast<int64_t>(s) * nk * dk, "strip_attention: K size");
  check(v.numel() == static_cast<int64_t>(s) * nk * dv, "strip_attention: V size");
  check(shape_numel(out_shape) == static_cast<int64_t>(s) * nq * dv, "strip_attention: out shape");
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  // Attention weights are kept for the backward pass.
  auto attn = std::make_shared<Tensor<T>>(Shape{s, nq, nk});
  Tensor<T> out(std::move(out_shape));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int is = 0; is < s; ++is) {
    const T* qs = q.val().data() + static_cast<int64_t>(is) * nq * dk;
    const T* ks = k.val().data() + static_cast<int64_t>(is) * nk * dk;
    const T* vs = v.val().data() + static_cast<int64_t>(is) * nk * dv;
    T* as = attn->data() + static_cast<int64_t>(is) * nq * nk;
    T* os = out.data() + static_cast<int64_t>(is) * nq * dv;
    gemm<T>(false, true, nq, nk, dk, qs, ks, as);
    for (int i = 0; i < nq; ++i) {
      T* row = as + static_cast<int64_t>(i) * nk;
      T m = row[0] * scale;
      for (int j = 0; j < nk; ++j) m = std::max(m, row[j] * scale);
      T sum = 0;
      for (int j = 0; j < nk; ++j) {
        row[j] = std::exp(row[j] * scale - m);
        sum += row[j];
      }
      for (int j = 0; j < nk; ++j) row[j] /= sum;
    }
    gemm<T>(false, false, nq, dv, nk, as, vs, os);
  }

  return make_op<T>(std::move(out), {q, k, v}, [s, nq, nk, dk, dv, scale, attn](Node<T>& n) {
    const Tensor<T>& qv = n.parents[0]->value;
    const Tensor<T>& kv = n.parents[1]->value;
    const Tensor<T>& vv = n.parents[2]->value;
    const bool need_q = n.parents[0]->requires_grad;
    const bool need_k = n.parents[1]->requires_grad;
    const bool need_v = n.parents[2]->requires_grad;
    Tensor<T>* gq = need_q ? &n.parents[0]->ensure_grad() : nullptr;
    Tensor<T>* gk = need_k ? &n.parents[1]->ensure_grad() : nullptr;
    Tensor<T>* gv = need_v ? &n.parents[2]->ensure_grad() : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int is = 0; is < s; ++is) {
      const T* qs = qv.data() + static_cast<int64_t>(is) * nq * dk;
      const T* ks = kv.data() + static_cast<int64_t>(is) * nk * dk;
      const T* vs = vv.data() + static_cast<int64_t>(is) * nk * dv;
      const T* as = attn->data() + static_cast<int64_t>(is) * nq * nk;
      const T* go = n.grad.data() + static_cast<int64_t>(is) * nq * dv;
      if (need_v)
        gemm<T>(true, false, nk, dv, nq, as, go, gv->data() + static_cast<int64_t>(is) * nk * dv,
                true);
      if (need_q || need_k) {
        std::vector<T> da(static_cast<size_t>(nq) * nk);
        gemm<T>(false, true, nq, nk, dv, go, vs, da.data());
        // softmax backward rows, fused with the 1/sqrt(dk) scale
        for (int i = 0; i < nq; ++i) {
          const T* arow = as + static_cast<int64_t>(i) * nk;
          T* drow = da.data() + static_cast<int64_t>(i) * nk;
          T dot = 0;
          for (int j = 0; j < nk; ++j) dot += arow[j] * drow[j];
          for (int j = 0; j < nk; ++j) drow[j] = arow[j] * (drow[j] - dot) * scale;
        }
        if (need_q)
          gemm<T>(false, false, nq, dk, nk, da.data(), ks,
                  gq->data() + static_cast<int64_t>(is) * nq * dk, true);
        if (need_k)
          gemm<T>(true, false, nk, dk, nq, da.data(), qs,
                  gk->data() + static_cast<int64_t>(is) * nk * dk, true);
      }
    }
  });
}

// Single-instance scaled dot-product attention: Q [nq,d], K [nk,d], V [nk,dv].
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  check(q.shape().size() == 2 && k.shape().size() == 2 && v.shape().size() == 2,
        "attention: rank-2 inputs expected");
  check(q.dim(1) == k.dim(1), "attention: Q/K feature dim mismatch");
  check(k.dim(0) == v.dim(0), "attention: K/V row count mismatch");
  return strip_attention(q, k, v, 1, q.dim(0), k.dim(0), q.dim(1), v.dim(1),
                         Shape{q.dim(0), v.dim(1)});
}

}  // namespace pean
