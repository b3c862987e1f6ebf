#pragma once

// Reverse-mode autodiff on dense tensors, sized for the desk-scale networks
// in this project. A Graph is a per-evaluation tape: ops append nodes in
// topological order, backward() walks the tape in reverse. Convolutions and
// matrix products run through Eigen GEMM (im2col); the column buffer is
// recomputed in the backward pass instead of being cached, trading a little
// compute for a flat memory profile.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coligen/core.hpp"

namespace coligen::ad {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

// A named parameter tensor with its gradient accumulator and Adam moments.
template <typename T>
struct ParamTensor {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m, v;  // Adam first/second moments

  explicit ParamTensor(std::string n, std::vector<std::size_t> shape)
      : name(std::move(n)), value(shape), grad(shape), m(shape), v(shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

namespace detail {

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// col is (Cin*kh*kw) x (OH*OW); zero padding.
template <typename T>
void im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, std::vector<T>& col) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  col.assign(cin * kh * kw * oh * ow, T(0));
  const T* xd = x.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col.data() + ((c * kh + ki) * kw + kj) * (oh * ow);
        for (std::size_t oi = 0; oi < oh; ++oi) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* xrow = xd + (c * h + static_cast<std::size_t>(ii)) * w;
          T* crow = row + oi * ow;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            crow[oj] = xrow[static_cast<std::size_t>(jj)];
          }
        }
      }
    }
  }
}

// Valid output-column range [oj0, oj1] for kernel column kj: the span where
// oj*stride + kj - pad stays inside [0, w).
inline std::pair<std::size_t, std::size_t> conv_col_span(std::size_t kj, std::size_t pad,
                                                         std::size_t stride, std::size_t w,
                                                         std::size_t ow) {
  std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(kj);
  std::size_t oj0 = lo > 0 ? (static_cast<std::size_t>(lo) + stride - 1) / stride : 0;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(w - 1 + pad) - static_cast<std::ptrdiff_t>(kj);
  if (hi < 0) return {1, 0};
  std::size_t oj1 = std::min(ow - 1, static_cast<std::size_t>(hi) / stride);
  return {oj0, oj1};
}

// Direct streaming convolution: no column buffer, contiguous row updates.
// Wins over im2col+GEMM when the output is wide and shallow.
template <typename T>
void direct_conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         std::size_t stride, std::size_t pad, std::size_t oh,
                         std::size_t ow, Tensor<T>& y) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
#pragma omp parallel for schedule(static) if (cout * oh * ow > 16384)
  for (std::ptrdiff_t co_s = 0; co_s < static_cast<std::ptrdiff_t>(cout); ++co_s) {
    const std::size_t co = static_cast<std::size_t>(co_s);
    for (std::size_t oi = 0; oi < oh; ++oi) {
      T* yrow = y.data() + (co * oh + oi) * ow;
      for (std::size_t j = 0; j < ow; ++j) yrow[j] = b[co];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* xrow = x.data() + (ci * h + static_cast<std::size_t>(ii)) * wd;
          const T* wrow = w.data() + ((co * cin + ci) * kh + ki) * kw;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            auto [oj0, oj1] = conv_col_span(kj, pad, stride, wd, ow);
            if (oj0 > oj1) continue;
            const T wv = wrow[kj];
            std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) -
                                 static_cast<std::ptrdiff_t>(pad);
            if (stride == 1) {
              const T* __restrict xs = xrow + off;
              T* __restrict yr = yrow;
              for (std::size_t oj = oj0; oj <= oj1; ++oj) yr[oj] += wv * xs[oj];
            } else {
              for (std::size_t oj = oj0; oj <= oj1; ++oj)
                yrow[oj] += wv * xrow[static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(oj * stride) + off)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void direct_conv_dx(const Tensor<T>& dy, const Tensor<T>& w, std::size_t stride,
                    std::size_t pad, std::size_t oh, std::size_t ow, Tensor<T>& dx) {
  const std::size_t cin = dx.dim(0), h = dx.dim(1), wd = dx.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
#pragma omp parallel for schedule(static) if (cin * h * wd > 16384)
  for (std::ptrdiff_t ci_s = 0; ci_s < static_cast<std::ptrdiff_t>(cin); ++ci_s) {
    const std::size_t ci = static_cast<std::size_t>(ci_s);
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        const T* wrow = w.data() + ((co * cin + ci) * kh + ki) * kw;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dxrow = dx.data() + (ci * h + static_cast<std::size_t>(ii)) * wd;
          const T* dyrow = dy.data() + (co * oh + oi) * ow;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            auto [oj0, oj1] = conv_col_span(kj, pad, stride, wd, ow);
            if (oj0 > oj1) continue;
            const T wv = wrow[kj];
            std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) -
                                 static_cast<std::ptrdiff_t>(pad);
            if (stride == 1) {
              T* __restrict dxs = dxrow + off;
              const T* __restrict dyr = dyrow;
              for (std::size_t oj = oj0; oj <= oj1; ++oj) dxs[oj] += wv * dyr[oj];
            } else {
              for (std::size_t oj = oj0; oj <= oj1; ++oj)
                dxrow[static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(oj * stride) + off)] += wv * dyrow[oj];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void direct_conv_dw(const Tensor<T>& dy, const Tensor<T>& x, std::size_t stride,
                    std::size_t pad, std::size_t oh, std::size_t ow, Tensor<T>& dw,
                    Tensor<T>& db) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = dy.dim(0), kh = dw.dim(2), kw = dw.dim(3);
#pragma omp parallel for schedule(static) if (cout * cin * kh * kw * oh > 8192)
  for (std::ptrdiff_t co_s = 0; co_s < static_cast<std::ptrdiff_t>(cout); ++co_s) {
    const std::size_t co = static_cast<std::size_t>(co_s);
    {
      const T* dyp = dy.data() + co * oh * ow;
      T s = T(0);
      for (std::size_t i = 0; i < oh * ow; ++i) s += dyp[i];
      db[co] += s;
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          auto [oj0, oj1] = conv_col_span(kj, pad, stride, wd, ow);
          if (oj0 > oj1) continue;
          std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) -
                               static_cast<std::ptrdiff_t>(pad);
          T acc = T(0);
          for (std::size_t oi = 0; oi < oh; ++oi) {
            std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                                static_cast<std::ptrdiff_t>(pad);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* xrow = x.data() + (ci * h + static_cast<std::size_t>(ii)) * wd;
            const T* dyrow = dy.data() + (co * oh + oi) * ow;
            if (stride == 1) {
              const T* __restrict xs = xrow + off;
              const T* __restrict dyr = dyrow;
              for (std::size_t oj = oj0; oj <= oj1; ++oj) acc += xs[oj] * dyr[oj];
            } else {
              for (std::size_t oj = oj0; oj <= oj1; ++oj)
                acc += xrow[static_cast<std::size_t>(
                           static_cast<std::ptrdiff_t>(oj * stride) + off)] *
                       dyrow[oj];
            }
          }
          dw[((co * cin + ci) * kh + ki) * kw + kj] += acc;
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                std::size_t oh, std::size_t ow, Tensor<T>& dx) {
  T* xd = dx.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col.data() + ((c * kh + ki) * kw + kj) * (oh * ow);
        for (std::size_t oi = 0; oi < oh; ++oi) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          T* xrow = xd + (c * h + static_cast<std::size_t>(ii)) * w;
          const T* crow = row + oi * ow;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            xrow[static_cast<std::size_t>(jj)] += crow[oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
class Graph {
 public:
  using BackFn = std::function<void(Graph&)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily
    bool needs_grad = false;
    BackFn back;
  };

  // --- node construction -------------------------------------------------

  int constant(Tensor<T> v) {
    return push(std::move(v), false, nullptr);
  }

  int input(Tensor<T> v, bool needs_grad) {
    return push(std::move(v), needs_grad, nullptr);
  }

  // Lease a parameter into the tape; its gradient accumulates into p.grad.
  int leaf(ParamTensor<T>& p, bool trainable = true) {
    Tensor<T> v = p.value;
    ParamTensor<T>* pp = trainable ? &p : nullptr;
    int id = push(std::move(v), trainable, nullptr);
    if (pp) {
      nodes_[static_cast<std::size_t>(id)].back = [id, pp](Graph& g) {
        const Tensor<T>& gr = g.node(id).grad;
        for (std::size_t i = 0; i < gr.size(); ++i) pp->grad[i] += gr[i];
      };
    }
    return id;
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T>& grad(int id) { return grad_of(id); }
  T value_scalar(int id) const { return nodes_[static_cast<std::size_t>(id)].value[0]; }
  std::size_t size() const { return nodes_.size(); }

  // --- operations ---------------------------------------------------------

  int conv2d(int x, int w, int b, std::size_t stride, std::size_t pad) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    const std::size_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const std::size_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != cin) throw DimensionError("conv2d: channel mismatch");
    if (bv.size() != cout) throw DimensionError("conv2d: bias size mismatch");
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
      throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
    const std::size_t K = cin * kh * kw, L = oh * ow;

    // Shallow/wide layers are memory-bound under im2col; stream them
    // directly. Deep narrow layers keep the GEMM path.
    const bool direct = stride == 1 && (L >= 4096 || std::min(cin, cout) < 16);

    Tensor<T> out({cout, oh, ow});
    std::shared_ptr<std::vector<T>> col;
    if (direct) {
      detail::direct_conv_forward(xv, wv, bv, stride, pad, oh, ow, out);
    } else {
      col = std::make_shared<std::vector<T>>();
      detail::im2col(xv, kh, kw, stride, pad, oh, ow, *col);
      CMapM<T> W(wv.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
      CMapM<T> C(col->data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
      MapM<T> Y(out.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(L));
      Y.noalias() = W * C;
      for (std::size_t c = 0; c < cout; ++c) {
        T bias = bv[c];
        T* yp = out.data() + c * L;
        for (std::size_t i = 0; i < L; ++i) yp[i] += bias;
      }
    }

    int id = push(std::move(out), any_grad({x, w, b}), nullptr);
    if (!node(id).needs_grad) return id;
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      if (direct) {
        if (g.wants(w) || g.wants(b)) {
          Tensor<T> scratch_w, scratch_b;
          Tensor<T>& dwt = g.wants(w) ? g.grad_of(w) : (scratch_w = Tensor<T>(wv.shape()));
          Tensor<T>& dbt = g.wants(b) ? g.grad_of(b) : (scratch_b = Tensor<T>(bv.shape()));
          detail::direct_conv_dw(dy, g.value(x), stride, pad, oh, ow, dwt, dbt);
        }
        if (g.wants(x))
          detail::direct_conv_dx(dy, g.value(w), stride, pad, oh, ow, g.grad_of(x));
        return;
      }
      CMapM<T> dY(dy.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(L));
      if (g.wants(w)) {
        CMapM<T> C(col->data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
        MapM<T> dW(g.grad_of(w).data(), static_cast<Eigen::Index>(cout),
                   static_cast<Eigen::Index>(K));
        dW.noalias() += dY * C.transpose();
      }
      if (g.wants(x)) {
        const Tensor<T>& wv2 = g.value(w);
        CMapM<T> W(wv2.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
        std::vector<T> dcol(K * L);
        MapM<T> dC(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
        dC.noalias() = W.transpose() * dY;
        detail::col2im_add(dcol, cin, h, wd, kh, kw, stride, pad, oh, ow, g.grad_of(x));
      }
      if (g.wants(b)) {
        Tensor<T>& db = g.grad_of(b);
        for (std::size_t c = 0; c < cout; ++c) {
          const T* dyp = dy.data() + c * L;
          T s = T(0);
          for (std::size_t i = 0; i < L; ++i) s += dyp[i];
          db[c] += s;
        }
      }
    };
    return id;
  }

  int upsample_nearest2x(int x) {
    const Tensor<T>& xv = value(x);
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor<T> out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          T v = xv.at(ch, i, j);
          out.at(ch, 2 * i, 2 * j) = v;
          out.at(ch, 2 * i, 2 * j + 1) = v;
          out.at(ch, 2 * i + 1, 2 * j) = v;
          out.at(ch, 2 * i + 1, 2 * j + 1) = v;
        }
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=](Graph& g) {
      if (!g.wants(x)) return;
      const Tensor<T>& dy = g.node(id).grad;
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            dx.at(ch, i, j) += dy.at(ch, 2 * i, 2 * j) + dy.at(ch, 2 * i, 2 * j + 1) +
                               dy.at(ch, 2 * i + 1, 2 * j) + dy.at(ch, 2 * i + 1, 2 * j + 1);
    };
    return id;
  }

  int instance_norm(int x, int gamma, int beta, T eps) {
    const Tensor<T>& xv = value(x);
    const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
    Tensor<T> out(xv.shape());
    Tensor<T> xhat(xv.shape());
    Tensor<T> invstd({c});
    const Tensor<T>& gv = value(gamma);
    const Tensor<T>& bv = value(beta);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* xp = xv.data() + ch * hw;
      T mu = T(0);
      for (std::size_t i = 0; i < hw; ++i) mu += xp[i];
      mu /= static_cast<T>(hw);
      T var = T(0);
      for (std::size_t i = 0; i < hw; ++i) {
        T d = xp[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(hw);
      T is = T(1) / std::sqrt(var + eps);
      invstd[ch] = is;
      T* xh = xhat.data() + ch * hw;
      T* yp = out.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (xp[i] - mu) * is;
        yp[i] = gv[ch] * xh[i] + bv[ch];
      }
    }
    int id = push(std::move(out), any_grad({x, gamma, beta}), nullptr);
    node(id).back = [=, xhat = std::move(xhat), invstd = std::move(invstd)](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      const Tensor<T>& gv2 = g.value(gamma);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* dyp = dy.data() + ch * hw;
        const T* xh = xhat.data() + ch * hw;
        if (g.wants(gamma)) {
          T s = T(0);
          for (std::size_t i = 0; i < hw; ++i) s += dyp[i] * xh[i];
          g.grad_of(gamma)[ch] += s;
        }
        if (g.wants(beta)) {
          T s = T(0);
          for (std::size_t i = 0; i < hw; ++i) s += dyp[i];
          g.grad_of(beta)[ch] += s;
        }
        if (g.wants(x)) {
          T mean_dxh = T(0), mean_dxh_xh = T(0);
          for (std::size_t i = 0; i < hw; ++i) {
            T dxh = dyp[i] * gv2[ch];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
          }
          mean_dxh /= static_cast<T>(hw);
          mean_dxh_xh /= static_cast<T>(hw);
          T* dxp = g.grad_of(x).data() + ch * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            T dxh = dyp[i] * gv2[ch];
            dxp[i] += invstd[ch] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
          }
        }
      }
    };
    return id;
  }

  int relu(int x) {
    return unary(x, [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T) { return v > T(0) ? T(1) : T(0); });
  }

  int leaky_relu(int x, T slope) {
    return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                 [slope](T v, T) { return v > T(0) ? T(1) : slope; });
  }

  int tanh_op(int x) {
    return unary(x, [](T v) { return std::tanh(v); },
                 [](T, T y) { return T(1) - y * y; });
  }

  int sigmoid_op(int x) {
    return unary(x, [](T v) { return detail::sigmoid(v); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  int softplus(int x) {
    return unary(x,
                 [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
                 [](T v, T) { return detail::sigmoid(v); });
  }

  // Straight-through threshold: forward (u >= 0), backward sigmoid'(u).
  int st_threshold(int u) {
    return unary(u, [](T v) { return v >= T(0) ? T(1) : T(0); },
                 [](T v, T) {
                   T s = detail::sigmoid(v);
                   return s * (T(1) - s);
                 });
  }

  // Smooth relaxation used when the mask must stay differentiable end to end.
  int relaxed_threshold(int u) { return sigmoid_op(u); }

  int add(int a, int b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv)) throw DimensionError("add: shape mismatch");
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    int id = push(std::move(out), any_grad({a, b}), nullptr);
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      if (g.wants(a)) {
        Tensor<T>& da = g.grad_of(a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (g.wants(b)) {
        Tensor<T>& db = g.grad_of(b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    };
    return id;
  }

  int mul(int a, int b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv)) throw DimensionError("mul: shape mismatch");
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    int id = push(std::move(out), any_grad({a, b}), nullptr);
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      if (g.wants(a)) {
        Tensor<T>& da = g.grad_of(a);
        const Tensor<T>& bv2 = g.value(b);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
      }
      if (g.wants(b)) {
        Tensor<T>& db = g.grad_of(b);
        const Tensor<T>& av2 = g.value(a);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av2[i];
      }
    };
    return id;
  }

  int scale(int x, T s) {
    return unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
  }

  int add_scalar(int x, T s) {
    return unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
  }

  int slice_channels(int x, std::size_t c0, std::size_t c1) {
    const Tensor<T>& xv = value(x);
    const std::size_t h = xv.dim(1), w = xv.dim(2), hw = h * w;
    Tensor<T> out({c1 - c0, h, w});
    std::copy(xv.data() + c0 * hw, xv.data() + c1 * hw, out.data());
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=](Graph& g) {
      if (!g.wants(x)) return;
      const Tensor<T>& dy = g.node(id).grad;
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[c0 * hw + i] += dy[i];
    };
    return id;
  }

  // Channel concatenation of two (C,H,W) tensors.
  int concat2(int a, int b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
      throw DimensionError("concat2: spatial shape mismatch");
    const std::size_t ca = av.dim(0), cb = bv.dim(0);
    Tensor<T> out({ca + cb, av.dim(1), av.dim(2)});
    std::copy(av.data(), av.data() + av.size(), out.data());
    std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
    int id = push(std::move(out), any_grad({a, b}), nullptr);
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      const std::size_t na = g.value(a).size();
      if (g.wants(a)) {
        Tensor<T>& da = g.grad_of(a);
        for (std::size_t i = 0; i < na; ++i) da[i] += dy[i];
      }
      if (g.wants(b)) {
        Tensor<T>& db = g.grad_of(b);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[na + i];
      }
    };
    return id;
  }

  // y[c,:,:] = x[c,:,:] * m[0,:,:]
  int mul_channel_broadcast(int x, int m) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& mv = value(m);
    const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
    if (mv.dim(0) != 1 || mv.size() != hw)
      throw DimensionError("mul_channel_broadcast: mask must be (1,H,W)");
    Tensor<T> out(xv.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i)
        out[ch * hw + i] = xv[ch * hw + i] * mv[i];
    int id = push(std::move(out), any_grad({x, m}), nullptr);
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      if (g.wants(x)) {
        Tensor<T>& dx = g.grad_of(x);
        const Tensor<T>& mv2 = g.value(m);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i)
            dx[ch * hw + i] += dy[ch * hw + i] * mv2[i];
      }
      if (g.wants(m)) {
        Tensor<T>& dm = g.grad_of(m);
        const Tensor<T>& xv2 = g.value(x);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i)
            dm[i] += dy[ch * hw + i] * xv2[ch * hw + i];
      }
    };
    return id;
  }

  // Class-id embedding lookup: ids (H,W) + table (K,E) -> (E,H,W).
  int embedding(const IntImage& ids, int table) {
    const Tensor<T>& tv = value(table);
    const std::size_t k = tv.dim(0), e = tv.dim(1);
    const std::size_t h = ids.height, w = ids.width, hw = h * w;
    // Out-of-table ids fall back to row 0 (reserved "unlabeled").
    std::vector<std::size_t> rows(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      std::int32_t id = ids.data[i];
      rows[i] = (id >= 0 && static_cast<std::size_t>(id) < k)
                    ? static_cast<std::size_t>(id)
                    : 0;
    }
    Tensor<T> out({e, h, w});
    for (std::size_t d = 0; d < e; ++d)
      for (std::size_t i = 0; i < hw; ++i)
        out[d * hw + i] = tv.at(rows[i], d);
    int id = push(std::move(out), any_grad({table}), nullptr);
    node(id).back = [=, rows = std::move(rows)](Graph& g) {
      if (!g.wants(table)) return;
      const Tensor<T>& dy = g.node(id).grad;
      Tensor<T>& dt = g.grad_of(table);
      for (std::size_t d = 0; d < e; ++d)
        for (std::size_t i = 0; i < hw; ++i)
          dt.at(rows[i], d) += dy[d * hw + i];
    };
    return id;
  }

  // Gather feature vectors at flat spatial locations: (C,H,W) -> (N,C).
  int gather_rows(int x, std::vector<std::size_t> locs) {
    const Tensor<T>& xv = value(x);
    const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
    for (std::size_t l : locs)
      if (l >= hw) throw InputError("gather_rows: location out of bounds");
    Tensor<T> out({locs.size(), c});
    for (std::size_t n = 0; n < locs.size(); ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        out.at(n, ch) = xv[ch * hw + locs[n]];
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=, locs = std::move(locs)](Graph& g) {
      if (!g.wants(x)) return;
      const Tensor<T>& dy = g.node(id).grad;
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t n = 0; n < locs.size(); ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          dx[ch * hw + locs[n]] += dy.at(n, ch);
    };
    return id;
  }

  // (N,Din) x (Dout,Din)^T + b -> (N,Dout)
  int linear(int x, int w, int b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    const std::size_t n = xv.dim(0), din = xv.dim(1), dout = wv.dim(0);
    if (wv.dim(1) != din) throw DimensionError("linear: weight shape mismatch");
    if (bv.size() != dout) throw DimensionError("linear: bias size mismatch");
    Tensor<T> out({n, dout});
    {
      CMapM<T> X(xv.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(din));
      CMapM<T> W(wv.data(), static_cast<Eigen::Index>(dout), static_cast<Eigen::Index>(din));
      MapM<T> Y(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dout));
      Y.noalias() = X * W.transpose();
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dout; ++j) out.at(i, j) += bv[j];
    int id = push(std::move(out), any_grad({x, w, b}), nullptr);
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      CMapM<T> dY(dy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dout));
      if (g.wants(w)) {
        CMapM<T> X(g.value(x).data(), static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(din));
        MapM<T> dW(g.grad_of(w).data(), static_cast<Eigen::Index>(dout),
                   static_cast<Eigen::Index>(din));
        dW.noalias() += dY.transpose() * X;
      }
      if (g.wants(x)) {
        CMapM<T> W(g.value(w).data(), static_cast<Eigen::Index>(dout),
                   static_cast<Eigen::Index>(din));
        MapM<T> dX(g.grad_of(x).data(), static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(din));
        dX.noalias() += dY * W;
      }
      if (g.wants(b)) {
        Tensor<T>& db = g.grad_of(b);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < dout; ++j) db[j] += dy.at(i, j);
      }
    };
    return id;
  }

  int l2_normalize_rows(int x, T eps = T(1e-12)) {
    const Tensor<T>& xv = value(x);
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor<T> out(xv.shape());
    Tensor<T> norms({n});
    for (std::size_t i = 0; i < n; ++i) {
      T s = T(0);
      for (std::size_t j = 0; j < d; ++j) s += xv.at(i, j) * xv.at(i, j);
      T nv = std::sqrt(s);
      norms[i] = nv < eps ? eps : nv;
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) = xv.at(i, j) / norms[i];
    }
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=, norms = std::move(norms)](Graph& g) {
      if (!g.wants(x)) return;
      const Tensor<T>& dy = g.node(id).grad;
      const Tensor<T>& y = g.node(id).value;
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t i = 0; i < n; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < d; ++j) dot += dy.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < d; ++j)
          dx.at(i, j) += (dy.at(i, j) - y.at(i, j) * dot) / norms[i];
      }
    };
    return id;
  }

  // (N,D) x (M,D)^T -> (N,M)
  int matmul_nt(int a, int b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    const std::size_t n = av.dim(0), d = av.dim(1), m = bv.dim(0);
    if (bv.dim(1) != d) throw DimensionError("matmul_nt: inner dim mismatch");
    Tensor<T> out({n, m});
    {
      CMapM<T> A(av.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
      CMapM<T> B(bv.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
      MapM<T> S(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
      S.noalias() = A * B.transpose();
    }
    int id = push(std::move(out), any_grad({a, b}), nullptr);
    node(id).back = [=](Graph& g) {
      const Tensor<T>& dy = g.node(id).grad;
      CMapM<T> dS(dy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
      if (g.wants(a)) {
        CMapM<T> B(g.value(b).data(), static_cast<Eigen::Index>(m),
                   static_cast<Eigen::Index>(d));
        MapM<T> dA(g.grad_of(a).data(), static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(d));
        dA.noalias() += dS * B;
      }
      if (g.wants(b)) {
        CMapM<T> A(g.value(a).data(), static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(d));
        MapM<T> dB(g.grad_of(b).data(), static_cast<Eigen::Index>(m),
                   static_cast<Eigen::Index>(d));
        dB.noalias() += dS.transpose() * A;
      }
    };
    return id;
  }

  // Contrastive cross-entropy over a similarity matrix whose diagonal holds
  // the positive pairs: mean_i of (logsumexp_j(S_ij / tau) - S_ii / tau).
  int nce_diag_mean(int s, T tau) {
    const Tensor<T>& sv = value(s);
    const std::size_t n = sv.dim(0);
    if (sv.dim(1) != n) throw DimensionError("nce_diag_mean: matrix must be square");
    Tensor<T> probs({n, n});
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      T mx = sv.at(i, 0) / tau;
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, sv.at(i, j) / tau);
      T z = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        T e = std::exp(sv.at(i, j) / tau - mx);
        probs.at(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) probs.at(i, j) /= z;
      loss += std::log(z) + mx - sv.at(i, i) / tau;
    }
    loss /= static_cast<T>(n);
    Tensor<T> out({1});
    out[0] = loss;
    int id = push(std::move(out), any_grad({s}), nullptr);
    node(id).back = [=, probs = std::move(probs)](Graph& g) {
      if (!g.wants(s)) return;
      T dl = g.node(id).grad[0];
      Tensor<T>& ds = g.grad_of(s);
      T f = dl / (tau * static_cast<T>(n));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ds.at(i, j) += f * (probs.at(i, j) - (i == j ? T(1) : T(0)));
    };
    return id;
  }

  int mean_all(int x) {
    const Tensor<T>& xv = value(x);
    if (xv.size() == 0) throw InputError("mean_all: empty tensor");
    T s = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    Tensor<T> out({1});
    out[0] = s / static_cast<T>(xv.size());
    const std::size_t n = xv.size();
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=](Graph& g) {
      if (!g.wants(x)) return;
      T dl = g.node(id).grad[0] / static_cast<T>(n);
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t i = 0; i < n; ++i) dx[i] += dl;
    };
    return id;
  }

  int sum_all(int x) {
    const Tensor<T>& xv = value(x);
    T s = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    Tensor<T> out({1});
    out[0] = s;
    const std::size_t n = xv.size();
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=](Graph& g) {
      if (!g.wants(x)) return;
      T dl = g.node(id).grad[0];
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t i = 0; i < n; ++i) dx[i] += dl;
    };
    return id;
  }

  // mean((x - target)^2); the least-squares GAN building block.
  int mse_to(int x, T target) {
    const Tensor<T>& xv = value(x);
    if (xv.size() == 0) throw InputError("mse_to: empty tensor");
    T s = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      T d = xv[i] - target;
      s += d * d;
    }
    const std::size_t n = xv.size();
    Tensor<T> out({1});
    out[0] = s / static_cast<T>(n);
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=](Graph& g) {
      if (!g.wants(x)) return;
      T dl = g.node(id).grad[0];
      const Tensor<T>& xv2 = g.value(x);
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t i = 0; i < n; ++i)
        dx[i] += dl * T(2) * (xv2[i] - target) / static_cast<T>(n);
    };
    return id;
  }

  // Weighted sum of scalar nodes.
  int weighted_sum(const std::vector<std::pair<int, T>>& terms) {
    T s = T(0);
    std::vector<int> ids;
    bool ng = false;
    for (auto& [t, w] : terms) {
      s += w * value_scalar(t);
      ids.push_back(t);
      ng = ng || node(t).needs_grad;
    }
    Tensor<T> out({1});
    out[0] = s;
    int id = push(std::move(out), ng, nullptr);
    std::vector<std::pair<int, T>> terms_copy = terms;
    node(id).back = [=, terms = std::move(terms_copy)](Graph& g) {
      T dl = g.node(id).grad[0];
      for (auto& [t, w] : terms)
        if (g.wants(t)) g.grad_of(t)[0] += dl * w;
    };
    return id;
  }

  // --- backward ------------------------------------------------------------

  void backward(int root) {
    Node& r = node(root);
    if (r.value.size() != 1)
      throw InputError("backward: root must be scalar");
    grad_of(root)[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& nd = nodes_[i];
      if (!nd.needs_grad || nd.grad.size() == 0 || !nd.back) continue;
      nd.back(*this);
    }
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  bool wants(int id) const { return node(id).needs_grad; }

  Tensor<T>& grad_of(int id) {
    Node& nd = node(id);
    if (nd.grad.size() == 0) nd.grad = Tensor<T>(nd.value.shape());
    return nd.grad;
  }

 private:
  template <typename F, typename DF>
  int unary(int x, F f, DF df) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    int id = push(std::move(out), any_grad({x}), nullptr);
    node(id).back = [=](Graph& g) {
      if (!g.wants(x)) return;
      const Tensor<T>& dy = g.node(id).grad;
      const Tensor<T>& xv2 = g.value(x);
      const Tensor<T>& yv = g.node(id).value;
      Tensor<T>& dx = g.grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i)
        dx[i] += dy[i] * df(xv2[i], yv[i]);
    };
    return id;
  }

  bool any_grad(std::initializer_list<int> ids) const {
    for (int i : ids)
      if (node(i).needs_grad) return true;
    return false;
  }

  int push(Tensor<T> v, bool needs_grad, BackFn back) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), needs_grad, std::move(back)});
    return static_cast<int>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace coligen::ad
