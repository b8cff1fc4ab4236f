#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "pean/autograd.hpp"

namespace pean {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

// C(m,n) = op(A) * op(B), optionally accumulating into C.
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, bool accumulate = false) {
  ECMap<T> ma(a, trans_a ? k : m, trans_a ? m : k);
  ECMap<T> mb(b, trans_b ? n : k, trans_b ? k : n);
  EMap<T> mc(c, m, n);
  if (!trans_a && !trans_b) accumulate ? void(mc.noalias() += ma * mb) : void(mc.noalias() = ma * mb);
  else if (trans_a && !trans_b) accumulate ? void(mc.noalias() += ma.transpose() * mb) : void(mc.noalias() = ma.transpose() * mb);
  else if (!trans_a && trans_b) accumulate ? void(mc.noalias() += ma * mb.transpose()) : void(mc.noalias() = ma * mb.transpose());
  else accumulate ? void(mc.noalias() += ma.transpose() * mb.transpose()) : void(mc.noalias() = ma.transpose() * mb.transpose());
}

// Backward closures below read n.value and n.parents[i]->value in place:
// the reverse sweep frees a node's buffers only after its own backward ran,
// and parents always outlive their consumers within the sweep.

// ---- elementwise binary ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a.val().same_shape(b.val()),
        "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (int p = 0; p < 2; ++p)
      if (n.parents[p]->requires_grad) {
        Tensor<T>& g = n.parents[p]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
      }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const Tensor<T>& av = n.parents[0]->value;
    const Tensor<T>& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

// x [..., C] + b [C]
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  const int c = b.dim(0);
  check(x.shape().back() == c, "add_bias: channel mismatch");
  Tensor<T> out = x.val();
  const int64_t rows = out.numel() / c;
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] += b.val()[j];
  return make_op<T>(std::move(out), {x, b}, [c, rows](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += n.grad[r * c + j];
    }
  });
}

// x [..., C] + y [..., 1]: broadcast add over the last axis.
template <class T>
Var<T> add_bcast_last(const Var<T>& x, const Var<T>& y) {
  check(y.shape().back() == 1, "add_bcast_last: y last dim must be 1");
  const int c = x.shape().back();
  const int64_t rows = x.numel() / c;
  check(y.numel() == rows, "add_bcast_last: leading dims mismatch");
  Tensor<T> out = x.val();
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] += y.val()[r];
  return make_op<T>(std::move(out), {x, y}, [c, rows](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        T s = 0;
        for (int j = 0; j < c; ++j) s += n.grad[r * c + j];
        g[r] += s;
      }
    }
  });
}

// ---- elementwise unary ----

template <class T>
T softplus_stable(T x) {
  // max(x,0) + log1p(exp(-|x|))
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& y = n.value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var<T> tanh_op(const Var<T>& a) {
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& y = n.value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (T(1) - y[i] * y[i]);
  });
}

// mish(x) = x * tanh(softplus(x))
template <class T>
Var<T> mish(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.val()[i] * std::tanh(softplus_stable(a.val()[i]));
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T v = x[i];
      const T th = std::tanh(softplus_stable(v));
      const T sg = T(1) / (T(1) + std::exp(-v));
      g[i] += n.grad[i] * (th + v * (T(1) - th * th) * sg);
    }
  });
}

// swish(x) = x * sigmoid(x)
template <class T>
Var<T> swish(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] / (T(1) + std::exp(-a.val()[i]));
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T sg = T(1) / (T(1) + std::exp(-x[i]));
      g[i] += n.grad[i] * (sg + x[i] * sg * (T(1) - sg));
    }
  });
}

template <class T>
Var<T> abs_op(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a.val()[i]);
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * (x[i] > 0 ? T(1) : (x[i] < 0 ? T(-1) : T(0)));
  });
}

template <class T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * a.val()[i];
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& x = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * T(2) * x[i];
  });
}

template <class T>
Var<T> sqrt_op(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(a.val()[i]);
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& y = n.value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / (T(2) * y[i]);
  });
}

// ---- reductions ----

template <class T>
Var<T> sum_all(const Var<T>& a) {
  T s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.val()[i];
  return make_op<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  T s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.val()[i];
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_op<T>(Tensor<T>::scalar(s * inv), {a}, [inv](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0] * inv;
  });
}

template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  return mean_all(abs_op(sub(a, b)));
}
template <class T>
Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b) {
  return mean_all(square(sub(a, b)));
}

// ---- softmax family (last axis) ----

template <class T>
Var<T> softmax_lastdim(const Var<T>& a) {
  const int c = a.shape().back();
  const int64_t rows = a.numel() / c;
  Tensor<T> out = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    T* p = out.data() + r * c;
    T m = p[0];
    for (int j = 1; j < c; ++j) m = std::max(m, p[j]);
    T s = 0;
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(p[j] - m);
      s += p[j];
    }
    for (int j = 0; j < c; ++j) p[j] /= s;
  }
  return make_op<T>(std::move(out), {a}, [c, rows](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& y = n.value;
    for (int64_t r = 0; r < rows; ++r) {
      const T* yr = y.data() + r * c;
      const T* gr = n.grad.data() + r * c;
      T dot = 0;
      for (int j = 0; j < c; ++j) dot += yr[j] * gr[j];
      for (int j = 0; j < c; ++j) g[r * c + j] += yr[j] * (gr[j] - dot);
    }
  });
}

template <class T>
Var<T> log_softmax_lastdim(const Var<T>& a) {
  const int c = a.shape().back();
  const int64_t rows = a.numel() / c;
  Tensor<T> out = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    T* p = out.data() + r * c;
    T m = p[0];
    for (int j = 1; j < c; ++j) m = std::max(m, p[j]);
    T s = 0;
    for (int j = 0; j < c; ++j) s += std::exp(p[j] - m);
    const T lse = m + std::log(s);
    for (int j = 0; j < c; ++j) p[j] -= lse;
  }
  return make_op<T>(std::move(out), {a}, [c, rows](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& y = n.value;
    for (int64_t r = 0; r < rows; ++r) {
      const T* yr = y.data() + r * c;
      const T* gr = n.grad.data() + r * c;
      T gs = 0;
      for (int j = 0; j < c; ++j) gs += gr[j];
      for (int j = 0; j < c; ++j) g[r * c + j] += gr[j] - std::exp(yr[j]) * gs;
    }
  });
}

// ---- shape ops ----

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.val().reshaped(std::move(s));
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

// [B,H,W,C] -> [B,W,H,C]
template <class T>
Var<T> permute_hw(const Var<T>& a) {
  const int b = a.dim(0), h = a.dim(1), w = a.dim(2), c = a.dim(3);
  Tensor<T> out(Shape{b, w, h, c});
  for (int ib = 0; ib < b; ++ib)
    for (int ih = 0; ih < h; ++ih)
      for (int iw = 0; iw < w; ++iw)
        for (int ic = 0; ic < c; ++ic) out.at(ib, iw, ih, ic) = a.val().at(ib, ih, iw, ic);
  return make_op<T>(std::move(out), {a}, [b, h, w, c](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw)
          for (int ic = 0; ic < c; ++ic) g.at(ib, ih, iw, ic) += n.grad.at(ib, iw, ih, ic);
  });
}

template <class T>
Var<T> concat_axis(const Var<T>& a, const Var<T>& b, int axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  check(sa.size() == sb.size(), "concat: rank mismatch");
  for (size_t i = 0; i < sa.size(); ++i)
    if (static_cast<int>(i) != axis) check(sa[i] == sb[i], "concat: shape mismatch off-axis");
  Shape so = sa;
  so[static_cast<size_t>(axis)] += sb[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sa[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < sa.size(); ++i) inner *= sa[i];
  const int64_t ca = sa[static_cast<size_t>(axis)] * inner;
  const int64_t cb = sb[static_cast<size_t>(axis)] * inner;
  Tensor<T> out(so);
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.val().data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(b.val().data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  return make_op<T>(std::move(out), {a, b}, [outer, ca, cb](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < ca; ++i) g[o * ca + i] += n.grad[o * (ca + cb) + i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < cb; ++i) g[o * cb + i] += n.grad[o * (ca + cb) + ca + i];
    }
  });
}

template <class T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  return concat_axis(a, b, static_cast<int>(a.shape().size()) - 1);
}

template <class T>
Var<T> slice_lastdim(const Var<T>& a, int lo, int hi) {
  const int c = a.shape().back();
  check(0 <= lo && lo < hi && hi <= c, "slice_lastdim: bad range");
  Shape so = a.shape();
  so.back() = hi - lo;
  const int64_t rows = a.numel() / c;
  Tensor<T> out(so);
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(a.val().data() + r * c + lo, hi - lo, out.data() + r * (hi - lo));
  return make_op<T>(std::move(out), {a}, [c, lo, hi, rows](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < hi - lo; ++j) g[r * c + lo + j] += n.grad[r * (hi - lo) + j];
  });
}

// x [B,L,D] -> [B,D] at time t
template <class T>
Var<T> select_time(const Var<T>& x, int t) {
  const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
  check(0 <= t && t < l, "select_time: t out of range");
  Tensor<T> out(Shape{b, d});
  for (int ib = 0; ib < b; ++ib)
    std::copy_n(x.val().data() + (static_cast<int64_t>(ib) * l + t) * d, d,
                out.data() + static_cast<int64_t>(ib) * d);
  return make_op<T>(std::move(out), {x}, [b, l, d, t](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ib = 0; ib < b; ++ib)
      for (int j = 0; j < d; ++j)
        g[(static_cast<int64_t>(ib) * l + t) * d + j] += n.grad[static_cast<int64_t>(ib) * d + j];
  });
}

// L tensors of [B,D] -> [B,L,D]
template <class T>
Var<T> stack_time(const std::vector<Var<T>>& xs) {
  check(!xs.empty(), "stack_time: empty input");
  const int l = static_cast<int>(xs.size());
  const int b = xs[0].dim(0), d = xs[0].dim(1);
  Tensor<T> out(Shape{b, l, d});
  for (int t = 0; t < l; ++t) {
    check(xs[static_cast<size_t>(t)].dim(0) == b && xs[static_cast<size_t>(t)].dim(1) == d,
          "stack_time: inconsistent shapes");
    for (int ib = 0; ib < b; ++ib)
      std::copy_n(xs[static_cast<size_t>(t)].val().data() + static_cast<int64_t>(ib) * d, d,
                  out.data() + (static_cast<int64_t>(ib) * l + t) * d);
  }
  return make_op<T>(std::move(out), xs, [b, l, d](Node<T>& n) {
    for (int t = 0; t < l; ++t) {
      if (!n.parents[static_cast<size_t>(t)]->requires_grad) continue;
      Tensor<T>& g = n.parents[static_cast<size_t>(t)]->ensure_grad();
      for (int ib = 0; ib < b; ++ib)
        for (int j = 0; j < d; ++j)
          g[static_cast<int64_t>(ib) * d + j] += n.grad[(static_cast<int64_t>(ib) * l + t) * d + j];
    }
  });
}

// x [..., in] * w [in, out] (+ b [out]): leading dims flattened implicitly.
template <class T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  const int in = w.dim(0), out_c = w.dim(1);
  check(x.shape().back() == in,
        "affine: input " + shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
  const int64_t rows = x.numel() / in;
  Shape so = x.shape();
  so.back() = out_c;
  Tensor<T> out(so);
  gemm<T>(false, false, rows, out_c, in, x.val().data(), w.val().data(), out.data());
  if (b.defined()) {
    check(b.dim(0) == out_c, "affine: bias dim mismatch");
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < out_c; ++j) out[r * out_c + j] += b.val()[j];
  }
  std::vector<Var<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_op<T>(std::move(out), parents, [rows, in, out_c, has_bias](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& wv = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      gemm<T>(false, true, rows, in, out_c, n.grad.data(), wv.data(),
              n.parents[0]->ensure_grad().data(), true);
    if (n.parents[1]->requires_grad)
      gemm<T>(true, false, in, out_c, rows, xv.data(), n.grad.data(),
              n.parents[1]->ensure_grad().data(), true);
    if (has_bias && n.parents[2]->requires_grad) {
      Tensor<T>& g = n.parents[2]->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < out_c; ++j) g[j] += n.grad[r * out_c + j];
    }
  });
}

// a [m,k] * b [k,n]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
        "matmul: incompatible shapes");
  return affine(a, b);
}

}  // namespace pean
