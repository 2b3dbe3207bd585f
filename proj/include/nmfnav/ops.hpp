#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "nmfnav/rng.hpp"
#include "nmfnav/tensor.hpp"

// Differentiable primitives. Every op takes the tape first; when any input
// requires a gradient (and the tape is enabled) the op records a closure that
// accumulates input gradients from the output gradient.
//
// Layout is NCHW for images and [rows, features] for dense data. Reductions
// accumulate in double regardless of the storage type.
namespace nmfnav::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void expect_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                                const char* op) {
  if (kernel == 0 || stride == 0) throw ShapeError(std::string(op) + ": kernel and stride must be >= 1");
  if (in + 2 * pad < kernel) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace detail

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  if (tape.wants(a, b)) {
    BasicTensor<T> ca = a, cb = b, co = out;
    if (ca.requires_grad()) ca.ensure_grad();
    if (cb.requires_grad()) cb.ensure_grad();
    tape.record(out, [ca, cb, co]() mutable {
      auto g = co.grad();
      if (ca.requires_grad()) {
        auto ga = ca.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (cb.requires_grad()) {
        auto gb = cb.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co]() mutable {
      auto g = co.grad();
      auto gx = cx.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (cx[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

/// Copying reshape; gradient passes through unchanged.
template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  BasicTensor<T> out(std::move(shape), x.values());
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co]() mutable {
      auto g = co.grad();
      auto gx = cx.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// 2-D convolution. x [N,C,H,W], weight [O,C,k,k], bias [O] (may be undefined).
template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t pad) {
  using namespace detail;
  expect_rank(x.shape(), 4, "conv2d input");
  expect_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(o) + " filters");
  }
  const std::size_t ho = conv_out_dim(h, k, stride, pad, "conv2d");
  const std::size_t wo = conv_out_dim(w, k, stride, pad, "conv2d");
  const std::size_t ckk = c * k * k, hw = ho * wo;

  const bool record = tape.wants(x, weight, bias);
  std::vector<T> cols(n * ckk * hw);
  BasicTensor<T> out(Shape{n, o, ho, wo});

  const auto im2col = [&](std::size_t s, T* col) {
    const T* xs = x.data().data() + s * c * h * w;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ki = 0; ki < k; ++ki)
        for (std::size_t kj = 0; kj < k; ++kj) {
          T* row = col + ((ci * k + ki) * k + kj) * hw;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
              row[oh * wo + ow] = (ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(h) &&
                                   iw < static_cast<std::ptrdiff_t>(w))
                                      ? xs[(ci * h + ih) * w + iw]
                                      : T(0);
            }
          }
        }
  };

  CMapMat<T> wm(weight.data().data(), o, ckk);
  for (std::size_t s = 0; s < n; ++s) {
    T* col = cols.data() + s * ckk * hw;
    im2col(s, col);
    MapMat<T> om(out.data().data() + s * o * hw, o, hw);
    om.noalias() = wm * CMapMat<T>(col, ckk, hw);
    if (bias.defined()) {
      for (std::size_t oc = 0; oc < o; ++oc) om.row(oc).array() += bias[oc];
    }
  }

  if (record) {
    BasicTensor<T> cx = x, cw = weight, cb = bias, co = out;
    if (cx.requires_grad()) cx.ensure_grad();
    if (cw.requires_grad()) cw.ensure_grad();
    if (cb.defined() && cb.requires_grad()) cb.ensure_grad();
    tape.record(out, [=, cols = std::move(cols)]() mutable {
      CMapMat<T> wmb(cw.data().data(), o, ckk);
      std::vector<T> dcol(ckk * hw);
      for (std::size_t s = 0; s < n; ++s) {
        CMapMat<T> g(co.grad().data() + s * o * hw, o, hw);
        CMapMat<T> col(cols.data() + s * ckk * hw, ckk, hw);
        if (cw.requires_grad()) {
          MapMat<T> gw(cw.grad().data(), o, ckk);
          gw.noalias() += g * col.transpose();
        }
        if (cb.defined() && cb.requires_grad()) {
          auto gb = cb.grad();
          for (std::size_t oc = 0; oc < o; ++oc) {
            double acc = 0.0;
            for (std::size_t j = 0; j < hw; ++j) acc += g(oc, j);
            gb[oc] += static_cast<T>(acc);
          }
        }
        if (cx.requires_grad()) {
          MapMat<T> dc(dcol.data(), ckk, hw);
          dc.noalias() = wmb.transpose() * g;
          T* gx = cx.grad().data() + s * c * h * w;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const T* row = dcol.data() + ((ci * k + ki) * k + kj) * hw;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                  const std::ptrdiff_t ih =
                      static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t ow = 0; ow < wo; ++ow) {
                    const std::ptrdiff_t iw =
                        static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                    gx[(ci * h + ih) * w + iw] += row[oh * wo + ow];
                  }
                }
              }
        }
      }
    });
  }
  return out;
}

/// Spatial max pooling over NCHW. Padded positions never win; ties go to the first index.
template <typename T>
BasicTensor<T> maxpool2d(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t kernel, std::size_t stride,
                         std::size_t pad) {
  using namespace detail;
  expect_rank(x.shape(), 4, "maxpool2d");
  if (pad >= kernel) throw ShapeError("maxpool2d: padding must be smaller than the kernel");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = conv_out_dim(h, kernel, stride, pad, "maxpool2d");
  const std::size_t wo = conv_out_dim(w, kernel, stride, pad, "maxpool2d");
  BasicTensor<T> out(Shape{n, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t idx = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow, ++idx) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = base;
        bool found = false;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t i = base + static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
            if (!found || x[i] > best) {
              best = x[i];
              best_i = i;
              found = true;
            }
          }
        }
        out[idx] = best;
        argmax[idx] = best_i;
      }
  }
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co, argmax = std::move(argmax)]() mutable {
      auto g = co.grad();
      auto gx = cx.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  return out;
}

/// [N,C,H,W] -> [N,C]
template <typename T>
BasicTensor<T> global_avg_pool(BasicTape<T>& tape, const BasicTensor<T>& x) {
  detail::expect_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  BasicTensor<T> out(Shape{n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += x[p * hw + j];
    out[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co, hw]() mutable {
      auto g = co.grad();
      auto gx = cx.grad();
      const T inv = T(1) / static_cast<T>(hw);
      for (std::size_t p = 0; p < g.size(); ++p)
        for (std::size_t j = 0; j < hw; ++j) gx[p * hw + j] += g[p] * inv;
    });
  }
  return out;
}

/// Fully connected layer. x [N,F], weight [O,F], bias [O] (may be undefined) -> [N,O].
template <typename T>
BasicTensor<T> dense(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias) {
  using namespace detail;
  expect_rank(x.shape(), 2, "dense input");
  expect_rank(weight.shape(), 2, "dense weight");
  const std::size_t n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != f) {
    throw ShapeError("dense: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("dense: bias " + shape_str(bias.shape()));
  }
  BasicTensor<T> out(Shape{n, o});
  MapMat<T> om(out.data().data(), n, o);
  // Coefficient-wise product: each row's result is independent of the row count.
  om.noalias() = CMapMat<T>(x.data().data(), n, f).lazyProduct(CMapMat<T>(weight.data().data(), o, f).transpose());
  if (bias.defined()) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < o; ++j) om(r, j) += bias[j];
  }
  if (tape.wants(x, weight, bias)) {
    BasicTensor<T> cx = x, cw = weight, cb = bias, co = out;
    if (cx.requires_grad()) cx.ensure_grad();
    if (cw.requires_grad()) cw.ensure_grad();
    if (cb.defined() && cb.requires_grad()) cb.ensure_grad();
    tape.record(out, [=]() mutable {
      CMapMat<T> g(co.grad().data(), n, o);
      if (cx.requires_grad()) {
        MapMat<T>(cx.grad().data(), n, f).noalias() += g * CMapMat<T>(cw.data().data(), o, f);
      }
      if (cw.requires_grad()) {
        MapMat<T>(cw.grad().data(), o, f).noalias() += g.transpose() * CMapMat<T>(cx.data().data(), n, f);
      }
      if (cb.defined() && cb.requires_grad()) {
        auto gb = cb.grad();
        for (std::size_t j = 0; j < o; ++j) {
          double acc = 0.0;
          for (std::size_t r = 0; r < n; ++r) acc += g(r, j);
          gb[j] += static_cast<T>(acc);
        }
      }
    });
  }
  return out;
}

/// Batch normalization over axis 1 of a [N,F] or [N,C,H,W] tensor.
///
/// Train mode normalizes with biased batch statistics and folds them into the
/// running buffers: running = momentum * running + (1 - momentum) * batch.
/// Eval mode normalizes with the running buffers.
template <typename T>
BasicTensor<T> batchnorm(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, BasicTensor<T> running_mean, BasicTensor<T> running_var,
                         double eps, double momentum, Mode mode) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batchnorm: expected rank 2 or 4, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  for (const BasicTensor<T>* p : std::initializer_list<const BasicTensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->rank() != 1 || p->dim(0) != c) {
      throw ShapeError("batchnorm: parameter " + shape_str(p->shape()) + " for " + std::to_string(c) + " channels");
    }
  }
  const std::size_t count = n * inner;
  if (count == 0) throw ShapeError("batchnorm: empty batch");

  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0, ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data().data() + (b * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data().data() + (b * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) ss += (p[j] - mu) * (p[j] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      running_mean[ch] = static_cast<T>(momentum * running_mean[ch] + (1.0 - momentum) * mu);
      running_var[ch] = static_cast<T>(momentum * running_var[ch] + (1.0 - momentum) * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
    }
  }

  BasicTensor<T> out(x.shape());
  BasicTensor<T> xhat(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        const T xh = (x[off + j] - mean[ch]) * inv_std[ch];
        xhat[off + j] = xh;
        out[off + j] = gamma[ch] * xh + beta[ch];
      }
    }

  if (tape.wants(x, gamma, beta)) {
    BasicTensor<T> cx = x, cg = gamma, cb = beta, co = out;
    if (cx.requires_grad()) cx.ensure_grad();
    if (cg.requires_grad()) cg.ensure_grad();
    if (cb.requires_grad()) cb.ensure_grad();
    tape.record(out, [=]() mutable {
      auto g = co.grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * inner;
          for (std::size_t j = 0; j < inner; ++j) {
            sum_g += g[off + j];
            sum_gx += static_cast<double>(g[off + j]) * xhat[off + j];
          }
        }
        if (cg.requires_grad()) cg.grad()[ch] += static_cast<T>(sum_gx);
        if (cb.requires_grad()) cb.grad()[ch] += static_cast<T>(sum_g);
        if (!cx.requires_grad()) continue;
        auto gx = cx.grad();
        const double scale = static_cast<double>(cg[ch]) * inv_std[ch];
        if (mode == Mode::train) {
          const double mg = sum_g / static_cast<double>(count);
          const double mgx = sum_gx / static_cast<double>(count);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * inner;
            for (std::size_t j = 0; j < inner; ++j)
              gx[off + j] += static_cast<T>(scale * (g[off + j] - mg - xhat[off + j] * mgx));
          }
        } else {
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * inner;
            for (std::size_t j = 0; j < inner; ++j) gx[off + j] += static_cast<T>(scale * g[off + j]);
          }
        }
      }
    });
  }
  return out;
}

/// Inverted dropout: train mode zeroes with probability `rate` and scales survivors
/// by 1/(1-rate); eval mode returns the input itself.
template <typename T>
BasicTensor<T> dropout(BasicTape<T>& tape, const BasicTensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw RangeError("dropout: rate must be in [0,1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = x[i] * mask[i];
  }
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co, mask = std::move(mask)]() mutable {
      auto g = co.grad();
      auto gx = cx.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

/// Symmetric set reduction: [N, P, F] -> [N, F] (or [P, F] -> [F]) taking the max
/// over points. The gradient goes to the first maximizing point of each feature.
template <typename T>
BasicTensor<T> max_pool_set(BasicTape<T>& tape, const BasicTensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("max_pool_set: expected [P,F] or [N,P,F], got " + shape_str(x.shape()));
  const bool batched = x.rank() == 3;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t pts = batched ? x.dim(1) : x.dim(0);
  const std::size_t f = batched ? x.dim(2) : x.dim(1);
  if (pts == 0) throw ShapeError("max_pool_set: empty point set");
  BasicTensor<T> out(batched ? Shape{n, f} : Shape{f});
  std::vector<std::size_t> argmax(n * f);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * pts * f;
    for (std::size_t j = 0; j < f; ++j) {
      std::size_t best = base + j;
      for (std::size_t p = 1; p < pts; ++p) {
        const std::size_t i = base + p * f + j;
        if (x[i] > x[best]) best = i;
      }
      out[b * f + j] = x[best];
      argmax[b * f + j] = best;
    }
  }
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co, argmax = std::move(argmax)]() mutable {
      auto g = co.grad();
      auto gx = cx.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  return out;
}

/// Joins two tensors along `axis`; all other extents must agree.
template <typename T>
BasicTensor<T> concat(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) {
    throw ShapeError("concat: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " on axis " +
                     std::to_string(axis));
  }
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (d != axis && a.dim(d) != b.dim(d)) {
      throw ShapeError("concat: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ off axis " +
                       std::to_string(axis));
    }
  }
  Shape shape = a.shape();
  shape[axis] = a.dim(axis) + b.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t la = a.dim(axis) * inner, lb = b.dim(axis) * inner;
  BasicTensor<T> out(std::move(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * la, la, out.data().data() + o * (la + lb));
    std::copy_n(b.data().data() + o * lb, lb, out.data().data() + o * (la + lb) + la);
  }
  if (tape.wants(a, b)) {
    BasicTensor<T> ca = a, cb = b, co = out;
    if (ca.requires_grad()) ca.ensure_grad();
    if (cb.requires_grad()) cb.ensure_grad();
    tape.record(out, [=]() mutable {
      auto g = co.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        if (ca.requires_grad()) {
          auto ga = ca.grad();
          for (std::size_t i = 0; i < la; ++i) ga[o * la + i] += g[o * (la + lb) + i];
        }
        if (cb.requires_grad()) {
          auto gb = cb.grad();
          for (std::size_t i = 0; i < lb; ++i) gb[o * lb + i] += g[o * (la + lb) + la + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc));
  if (tape.wants(x)) {
    BasicTensor<T> cx = x, co = out;
    cx.ensure_grad();
    tape.record(out, [cx, co]() mutable {
      const T g = co.grad()[0];
      for (T& gx : cx.grad()) gx += g;
    });
  }
  return out;
}

/// (1/m) * sum (target - pred)^2 over all m elements.
template <typename T>
BasicTensor<T> mse_loss(BasicTape<T>& tape, const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.numel() != target.numel()) {
    throw ShapeError("mse_loss: prediction length " + std::to_string(pred.numel()) + " vs target length " +
                     std::to_string(target.numel()));
  }
  const std::size_t m = pred.numel();
  if (m == 0) throw ShapeError("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = static_cast<double>(target[i]) - static_cast<double>(pred[i]);
    acc += d * d;
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(m)));
  if (tape.wants(pred, target)) {
    BasicTensor<T> cp = pred, ct = target, co = out;
    if (cp.requires_grad()) cp.ensure_grad();
    if (ct.requires_grad()) ct.ensure_grad();
    tape.record(out, [cp, ct, co, m]() mutable {
      const double g = co.grad()[0];
      const double k = 2.0 * g / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(cp[i]) - static_cast<double>(ct[i]);
        if (cp.requires_grad()) cp.grad()[i] += static_cast<T>(k * d);
        if (ct.requires_grad()) ct.grad()[i] -= static_cast<T>(k * d);
      }
    });
  }
  return out;
}

}  // namespace nmfnav::ops
