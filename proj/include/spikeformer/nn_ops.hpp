// Dense network building blocks on top of the tape: linear maps, softmax,
// layer/batch norm, 2-D convolution (im2col + GEMM) and pooling, plus the
// feature-map -> token reshuffle and learned positional offsets.
//
// Convolution, batch norm and pooling treat every axis before the channel
// axis as batch, so [T,B,C,H,W] video tensors flow through without reshapes.
// All GEMMs go through Eigen maps over the flat buffers.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <optional>
#include <vector>

#include "spikeformer/tensor.hpp"

namespace spikeformer {

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Map = Eigen::Map<MatRM<S>>;
template <typename S>
using CMap = Eigen::Map<const MatRM<S>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// linear: y[..., j] = sum_i x[..., i] W[i, j] (+ b[j])
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w,
                 const std::optional<Tensor<S>>& b = std::nullopt) {
  if (w.rank() != 2)
    throw std::invalid_argument("linear: weight must be rank 2, got " + shape_str(w.shape()));
  const Index din = w.extent(0);
  const Index dout = w.extent(1);
  if (x.shape().back() != din)
    throw std::invalid_argument("linear: input feature size " +
                                std::to_string(x.shape().back()) + " does not match weight " +
                                shape_str(w.shape()));
  if (b && (b->rank() != 1 || b->extent(0) != dout))
    throw std::invalid_argument("linear: bias shape " + shape_str(b->shape()) +
                                " does not match output size " + std::to_string(dout));
  const Index rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<S> y = Tensor<S>::zeros(out_shape);

  detail::CMap<S> X(x.data(), rows, din);
  detail::CMap<S> W(w.data(), din, dout);
  detail::Map<S> Y(y.data(), rows, dout);
  Y.noalias() = X * W;
  if (b) {
    detail::CMap<S> B(b->data(), 1, dout);
    Y.rowwise() += B.row(0);
  }

  const bool bias_grad = b && b->requires_grad();
  if (Tape<S>::current() && (x.requires_grad() || w.requires_grad() || bias_grad)) {
    Tensor<S> bias = b ? *b : Tensor<S>();
    detail::record(y, [x, w, bias, bias_grad, y, rows, din, dout]() {
      detail::CMap<S> GY(y.impl()->grad.data(), rows, dout);
      if (x.requires_grad()) {
        detail::Map<S> GX(x.impl()->ensure_grad(), rows, din);
        detail::CMap<S> W(w.data(), din, dout);
        GX.noalias() += GY * W.transpose();
      }
      if (w.requires_grad()) {
        detail::Map<S> GW(w.impl()->ensure_grad(), din, dout);
        detail::CMap<S> X(x.data(), rows, din);
        GW.noalias() += X.transpose() * GY;
      }
      if (bias_grad) {
        detail::Map<S> GB(bias.impl()->ensure_grad(), 1, dout);
        GB.row(0) += GY.colwise().sum();
      }
    });
  }
  return y;
}

// Overload so a plain tensor bias binds without spelling the optional (the
// template parameter cannot be deduced through std::optional).
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return linear(x, w, std::optional<Tensor<S>>(b));
}

// ---------------------------------------------------------------------------
// softmax over one axis
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(x.shape()));
  const Index len = x.extent(axis);
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.extent(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);

  Tensor<S> y = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* yv = y.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      S m = xv[base];
      for (Index j = 1; j < len; ++j) m = std::max(m, xv[base + j * inner]);
      S sum = S(0);
      for (Index j = 0; j < len; ++j) {
        const S e = std::exp(xv[base + j * inner] - m);
        yv[base + j * inner] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (Index j = 0; j < len; ++j) yv[base + j * inner] *= inv;
    }
  }
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, outer, len, inner]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      const S* yv = y.data();
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          const Index base = o * len * inner + i;
          S dot = S(0);
          for (Index j = 0; j < len; ++j) dot += gy[base + j * inner] * yv[base + j * inner];
          for (Index j = 0; j < len; ++j) {
            const Index k = base + j * inner;
            gx[k] += yv[k] * (gy[k] - dot);
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  const Index d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw std::invalid_argument("layer_norm: gamma/beta must have " + std::to_string(d) +
                                " elements for input " + shape_str(x.shape()));
  const Index rows = x.numel() / d;
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  // per-row mean and inverse stddev, kept for the backward pass
  auto stats = std::make_shared<std::vector<S>>(static_cast<std::size_t>(2 * rows));
  const S* xv = x.data();
  const S* gv = gamma.data();
  const S* bv = beta.data();
  S* yv = y.data();
  const S invd = S(1) / static_cast<S>(d);
  for (Index r = 0; r < rows; ++r) {
    const S* xr = xv + r * d;
    S mean = S(0);
    for (Index j = 0; j < d; ++j) mean += xr[j];
    mean *= invd;
    S var = S(0);
    for (Index j = 0; j < d; ++j) {
      const S c = xr[j] - mean;
      var += c * c;
    }
    var *= invd;
    const S inv = S(1) / std::sqrt(var + eps);
    (*stats)[static_cast<std::size_t>(2 * r)] = mean;
    (*stats)[static_cast<std::size_t>(2 * r + 1)] = inv;
    S* yr = yv + r * d;
    for (Index j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * inv * gv[j] + bv[j];
  }
  if (detail::want_grad<S>({&x, &gamma, &beta})) {
    detail::record(y, [x, gamma, beta, y, stats, rows, d, invd]() {
      const S* gy = y.impl()->grad.data();
      const S* xv = x.data();
      const S* gv = gamma.data();
      S* gg = gamma.requires_grad() ? gamma.impl()->ensure_grad() : nullptr;
      S* gb = beta.requires_grad() ? beta.impl()->ensure_grad() : nullptr;
      S* gx = x.requires_grad() ? x.impl()->ensure_grad() : nullptr;
      for (Index r = 0; r < rows; ++r) {
        const S mean = (*stats)[static_cast<std::size_t>(2 * r)];
        const S inv = (*stats)[static_cast<std::size_t>(2 * r + 1)];
        const S* xr = xv + r * d;
        const S* gyr = gy + r * d;
        // dxhat and the two row sums needed for dx
        S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
        for (Index j = 0; j < d; ++j) {
          const S xhat = (xr[j] - mean) * inv;
          const S dxhat = gyr[j] * gv[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gg) gg[j] += gyr[j] * xhat;
          if (gb) gb[j] += gyr[j];
        }
        if (gx) {
          S* gxr = gx + r * d;
          for (Index j = 0; j < d; ++j) {
            const S xhat = (xr[j] - mean) * inv;
            const S dxhat = gyr[j] * gv[j];
            gxr[j] += inv * (dxhat - invd * sum_dxhat - xhat * invd * sum_dxhat_xhat);
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// batch_norm over (batch..., H, W) per channel; channel axis is rank-3
// ---------------------------------------------------------------------------

// Learnable scale/shift plus running statistics.  The running buffers are
// plain (non-gradient) tensors so checkpoints can carry them by name.
template <typename S>
struct BatchNorm {
  Tensor<S> gamma, beta;          // learnable
  Tensor<S> running_mean, running_var;  // updated in training forward passes
  S momentum = S(0.1);
  S eps = S(1e-5);

  explicit BatchNorm(Index channels)
      : gamma(Tensor<S>::filled({channels}, S(1)).set_requires_grad()),
        beta(Tensor<S>::zeros({channels}).set_requires_grad()),
        running_mean(Tensor<S>::zeros({channels})),
        running_var(Tensor<S>::filled({channels}, S(1))) {}
};

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, BatchNorm<S>& bn, bool training) {
  if (x.rank() < 3)
    throw std::invalid_argument("batch_norm: need rank >= 3 ([...,C,H,W]), got " +
                                shape_str(x.shape()));
  const std::size_t caxis = x.rank() - 3;
  const Index c = x.extent(caxis);
  if (bn.gamma.numel() != c)
    throw std::invalid_argument("batch_norm: " + std::to_string(bn.gamma.numel()) +
                                " channels configured but input has " + std::to_string(c));
  Index outer = 1;
  for (std::size_t a = 0; a < caxis; ++a) outer *= x.extent(a);
  const Index inner = x.extent(caxis + 1) * x.extent(caxis + 2);
  const Index count = outer * inner;  // reduction size per channel

  // channel statistics for this pass
  std::vector<S> mean(static_cast<std::size_t>(c)), inv(static_cast<std::size_t>(c));
  const S* xv = x.data();
  if (training) {
    std::vector<S> var(static_cast<std::size_t>(c), S(0));
    for (Index ch = 0; ch < c; ++ch) {
      S m = S(0);
      for (Index o = 0; o < outer; ++o) {
        const S* p = xv + (o * c + ch) * inner;
        for (Index i = 0; i < inner; ++i) m += p[i];
      }
      m /= static_cast<S>(count);
      S v = S(0);
      for (Index o = 0; o < outer; ++o) {
        const S* p = xv + (o * c + ch) * inner;
        for (Index i = 0; i < inner; ++i) {
          const S d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<S>(count);  // biased, matching the normalization below
      mean[static_cast<std::size_t>(ch)] = m;
      var[static_cast<std::size_t>(ch)] = v;
      inv[static_cast<std::size_t>(ch)] = S(1) / std::sqrt(v + bn.eps);
    }
    S* rm = bn.running_mean.data();
    S* rv = bn.running_var.data();
    for (Index ch = 0; ch < c; ++ch) {
      rm[ch] = (S(1) - bn.momentum) * rm[ch] + bn.momentum * mean[static_cast<std::size_t>(ch)];
      rv[ch] = (S(1) - bn.momentum) * rv[ch] + bn.momentum * var[static_cast<std::size_t>(ch)];
    }
  } else {
    const S* rm = bn.running_mean.data();
    const S* rv = bn.running_var.data();
    for (Index ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = rm[ch];
      inv[static_cast<std::size_t>(ch)] = S(1) / std::sqrt(rv[ch] + bn.eps);
    }
  }

  Tensor<S> y = Tensor<S>::zeros(x.shape());
  S* yv = y.data();
  const S* gv = bn.gamma.data();
  const S* bv = bn.beta.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index ch = 0; ch < c; ++ch) {
      const S m = mean[static_cast<std::size_t>(ch)];
      const S iv = inv[static_cast<std::size_t>(ch)];
      const S g = gv[ch];
      const S b = bv[ch];
      const S* p = xv + (o * c + ch) * inner;
      S* q = yv + (o * c + ch) * inner;
      for (Index i = 0; i < inner; ++i) q[i] = (p[i] - m) * iv * g + b;
    }
  }

  Tensor<S> gamma = bn.gamma, beta = bn.beta;
  if (detail::want_grad<S>({&x, &gamma, &beta})) {
    auto saved_mean = std::make_shared<std::vector<S>>(std::move(mean));
    auto saved_inv = std::make_shared<std::vector<S>>(std::move(inv));
    detail::record(y, [x, gamma, beta, y, saved_mean, saved_inv, outer, c, inner, count,
                       training]() {
      const S* gy = y.impl()->grad.data();
      const S* xv = x.data();
      const S* gv = gamma.data();
      S* gg = gamma.requires_grad() ? gamma.impl()->ensure_grad() : nullptr;
      S* gb = beta.requires_grad() ? beta.impl()->ensure_grad() : nullptr;
      S* gx = x.requires_grad() ? x.impl()->ensure_grad() : nullptr;
      for (Index ch = 0; ch < c; ++ch) {
        const S m = (*saved_mean)[static_cast<std::size_t>(ch)];
        const S iv = (*saved_inv)[static_cast<std::size_t>(ch)];
        S sum_dy = S(0), sum_dy_xhat = S(0);
        for (Index o = 0; o < outer; ++o) {
          const Index base = (o * c + ch) * inner;
          for (Index i = 0; i < inner; ++i) {
            const S dy = gy[base + i];
            sum_dy += dy;
            sum_dy_xhat += dy * (xv[base + i] - m) * iv;
          }
        }
        if (gg) gg[ch] += sum_dy_xhat;
        if (gb) gb[ch] += sum_dy;
        if (gx) {
          const S g = gv[ch];
          if (training) {
            // batch statistics depend on x, so the full three-term formula
            const S n = static_cast<S>(count);
            for (Index o = 0; o < outer; ++o) {
              const Index base = (o * c + ch) * inner;
              for (Index i = 0; i < inner; ++i) {
                const S xhat = (xv[base + i] - m) * iv;
                gx[base + i] +=
                    g * iv / n * (n * gy[base + i] - sum_dy - xhat * sum_dy_xhat);
              }
            }
          } else {
            for (Index o = 0; o < outer; ++o) {
              const Index base = (o * c + ch) * inner;
              for (Index i = 0; i < inner; ++i) gx[base + i] += gy[base + i] * g * iv;
            }
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// conv2d: stride/zero-padding, no bias (a following norm layer absorbs it)
// ---------------------------------------------------------------------------

namespace detail {

// Scatters x (one sample, [C,H,W]) into patch rows: cols is (C*kh*kw) x
// (oh*ow), row (c*kh+di)*kw+dj holding the input pixel each output position
// sees at kernel offset (di,dj).
template <typename S>
void im2col(const S* x, Index c, Index h, Index w, Index kh, Index kw, Index stride, Index pad,
            Index oh, Index ow, S* cols) {
  for (Index ch = 0; ch < c; ++ch) {
    for (Index di = 0; di < kh; ++di) {
      for (Index dj = 0; dj < kw; ++dj) {
        S* row = cols + ((ch * kh + di) * kw + dj) * (oh * ow);
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride + di - pad;
          if (iy < 0 || iy >= h) {
            std::fill_n(row + oy * ow, ow, S(0));
            continue;
          }
          const S* src = x + (ch * h + iy) * w;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride + dj - pad;
            row[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col: accumulates patch-row gradients back onto the image.
template <typename S>
void col2im_add(const S* cols, Index c, Index h, Index w, Index kh, Index kw, Index stride,
                Index pad, Index oh, Index ow, S* gx) {
  for (Index ch = 0; ch < c; ++ch) {
    for (Index di = 0; di < kh; ++di) {
      for (Index dj = 0; dj < kw; ++dj) {
        const S* row = cols + ((ch * kh + di) * kw + dj) * (oh * ow);
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride + di - pad;
          if (iy < 0 || iy >= h) continue;
          S* dst = gx + (ch * h + iy) * w;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride + dj - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, Index stride, Index pad) {
  if (x.rank() < 3)
    throw std::invalid_argument("conv2d: need rank >= 3 ([...,C,H,W]), got " +
                                shape_str(x.shape()));
  if (kernel.rank() != 4)
    throw std::invalid_argument("conv2d: kernel must be [out,in,kh,kw], got " +
                                shape_str(kernel.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const std::size_t caxis = x.rank() - 3;
  const Index cin = x.extent(caxis);
  const Index h = x.extent(caxis + 1);
  const Index w = x.extent(caxis + 2);
  const Index cout = kernel.extent(0);
  const Index kh = kernel.extent(2);
  const Index kw = kernel.extent(3);
  if (kernel.extent(1) != cin)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.extent(1)) +
                                " input channels, tensor has " + std::to_string(cin));
  const Index oh = (h + 2 * pad - kh) / stride + 1;
  const Index ow = (w + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) +
                                " does not fit input " + shape_str(x.shape()));
  Index batch = 1;
  for (std::size_t a = 0; a < caxis; ++a) batch *= x.extent(a);

  Shape out_shape(x.shape().begin(), x.shape().begin() + caxis);
  out_shape.insert(out_shape.end(), {cout, oh, ow});
  Tensor<S> y = Tensor<S>::zeros(out_shape);

  const Index ck = cin * kh * kw;
  const Index ohw = oh * ow;
  AlignedVec<S> cols(static_cast<std::size_t>(ck * ohw));
  detail::CMap<S> K(kernel.data(), cout, ck);
  for (Index s = 0; s < batch; ++s) {
    detail::im2col(x.data() + s * cin * h * w, cin, h, w, kh, kw, stride, pad, oh, ow,
                   cols.data());
    detail::CMap<S> C(cols.data(), ck, ohw);
    detail::Map<S> Y(y.data() + s * cout * ohw, cout, ohw);
    Y.noalias() = K * C;
  }

  if (detail::want_grad<S>({&x, &kernel})) {
    // the patch matrix is rebuilt in the backward pass instead of stored:
    // one sample's worth of scratch instead of a whole batch
    detail::record(y, [x, kernel, y, batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow, ck,
                       ohw]() {
      AlignedVec<S> cols(static_cast<std::size_t>(ck * ohw));
      AlignedVec<S> dcols(static_cast<std::size_t>(ck * ohw));
      detail::CMap<S> K(kernel.data(), cout, ck);
      S* gk = kernel.requires_grad() ? kernel.impl()->ensure_grad() : nullptr;
      S* gx = x.requires_grad() ? x.impl()->ensure_grad() : nullptr;
      for (Index s = 0; s < batch; ++s) {
        detail::CMap<S> GY(y.impl()->grad.data() + s * cout * ohw, cout, ohw);
        if (gk) {
          detail::im2col(x.data() + s * cin * h * w, cin, h, w, kh, kw, stride, pad, oh, ow,
                         cols.data());
          detail::CMap<S> C(cols.data(), ck, ohw);
          detail::Map<S> GK(gk, cout, ck);
          GK.noalias() += GY * C.transpose();
        }
        if (gx) {
          detail::Map<S> DC(dcols.data(), ck, ohw);
          DC.noalias() = K.transpose() * GY;
          detail::col2im_add(dcols.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                             gx + s * cin * h * w);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// 2x2 average pooling with stride 2
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> avg_pool_2x2(const Tensor<S>& x) {
  if (x.rank() < 3)
    throw std::invalid_argument("avg_pool_2x2: need rank >= 3, got " + shape_str(x.shape()));
  const std::size_t caxis = x.rank() - 3;
  const Index h = x.extent(caxis + 1);
  const Index w = x.extent(caxis + 2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("avg_pool_2x2: spatial extents must be even, got " +
                                shape_str(x.shape()));
  const Index oh = h / 2, ow = w / 2;
  Index planes = 1;  // batch * channels
  for (std::size_t a = 0; a <= caxis; ++a) planes *= x.extent(a);
  Shape out_shape = x.shape();
  out_shape[caxis + 1] = oh;
  out_shape[caxis + 2] = ow;
  Tensor<S> y = Tensor<S>::zeros(out_shape);
  const S* xv = x.data();
  S* yv = y.data();
  for (Index p = 0; p < planes; ++p) {
    const S* in = xv + p * h * w;
    S* out = yv + p * oh * ow;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const Index iy = oy * 2, ix = ox * 2;
        out[oy * ow + ox] = (in[iy * w + ix] + in[iy * w + ix + 1] + in[(iy + 1) * w + ix] +
                             in[(iy + 1) * w + ix + 1]) *
                            S(0.25);
      }
  }
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, planes, h, w, oh, ow]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      for (Index p = 0; p < planes; ++p) {
        S* gin = gx + p * h * w;
        const S* gout = gy + p * oh * ow;
        for (Index oy = 0; oy < oh; ++oy)
          for (Index ox = 0; ox < ow; ++ox) {
            const S g = gout[oy * ow + ox] * S(0.25);
            const Index iy = oy * 2, ix = ox * 2;
            gin[iy * w + ix] += g;
            gin[iy * w + ix + 1] += g;
            gin[(iy + 1) * w + ix] += g;
            gin[(iy + 1) * w + ix + 1] += g;
          }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// feature map -> token grid, and learned positional offsets
// ---------------------------------------------------------------------------

// [T,B,C,h,w] -> [T,B,h*w,C]: token p = y*w + x in row-major scan order,
// embedding dimension = channels.
template <typename S>
Tensor<S> tokens_from_feature_map(const Tensor<S>& x) {
  if (x.rank() != 5)
    throw std::invalid_argument("tokens_from_feature_map: need [T,B,C,H,W], got " +
                                shape_str(x.shape()));
  const Index t = x.extent(0), b = x.extent(1), c = x.extent(2), h = x.extent(3),
              w = x.extent(4);
  const Index n = h * w;
  Tensor<S> y = Tensor<S>::zeros({t, b, n, c});
  const S* xv = x.data();
  S* yv = y.data();
  for (Index tb = 0; tb < t * b; ++tb) {
    const S* in = xv + tb * c * n;   // [c][n]
    S* out = yv + tb * n * c;        // [n][c]
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < n; ++p) out[p * c + ch] = in[ch * n + p];
  }
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, t, b, c, n]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      for (Index tb = 0; tb < t * b; ++tb) {
        S* gin = gx + tb * c * n;
        const S* gout = gy + tb * n * c;
        for (Index ch = 0; ch < c; ++ch)
          for (Index p = 0; p < n; ++p) gin[ch * n + p] += gout[p * c + ch];
      }
    });
  }
  return y;
}

// z[t,b,p,:] += table[t,p,:]; the table may hold more rows than the clip is
// long (extra rows simply go unused and receive no gradient).
template <typename S>
Tensor<S> add_positional(const Tensor<S>& z, const Tensor<S>& table) {
  if (z.rank() != 4)
    throw std::invalid_argument("add_positional: tokens must be [T,B,N,D], got " +
                                shape_str(z.shape()));
  if (table.rank() != 3)
    throw std::invalid_argument("add_positional: table must be [Tmax,N,D], got " +
                                shape_str(table.shape()));
  const Index t = z.extent(0), b = z.extent(1), n = z.extent(2), d = z.extent(3);
  if (table.extent(0) < t || table.extent(1) != n || table.extent(2) != d)
    throw std::invalid_argument("add_positional: table " + shape_str(table.shape()) +
                                " does not cover tokens " + shape_str(z.shape()));
  Tensor<S> y = Tensor<S>::zeros(z.shape());
  const S* zv = z.data();
  const S* ev = table.data();
  S* yv = y.data();
  for (Index ti = 0; ti < t; ++ti)
    for (Index bi = 0; bi < b; ++bi) {
      const S* e = ev + ti * n * d;
      const S* zr = zv + (ti * b + bi) * n * d;
      S* yr = yv + (ti * b + bi) * n * d;
      for (Index k = 0; k < n * d; ++k) yr[k] = zr[k] + e[k];
    }
  if (detail::want_grad<S>({&z, &table})) {
    detail::record(y, [z, table, y, t, b, n, d]() {
      const S* gy = y.impl()->grad.data();
      if (z.requires_grad()) {
        S* gz = z.impl()->ensure_grad();
        const Index total = t * b * n * d;
        for (Index i = 0; i < total; ++i) gz[i] += gy[i];
      }
      if (table.requires_grad()) {
        S* ge = table.impl()->ensure_grad();
        for (Index ti = 0; ti < t; ++ti)
          for (Index bi = 0; bi < b; ++bi) {
            const S* gr = gy + (ti * b + bi) * n * d;
            S* e = ge + ti * n * d;
            for (Index k = 0; k < n * d; ++k) e[k] += gr[k];
          }
      }
    });
  }
  return y;
}

}  // namespace spikeformer
