// Divided space-time attention and the transformer block built on it.
//
// Tokens are [T, B, N, D].  Temporal attention lets each token attend to the
// same spatial position at every time step (T x T score matrices, one per
// (batch, position, head)); spatial attention attends within a frame (N x N,
// one per (time, batch, head)).  Both are fused tape ops: the forward runs
// one Eigen GEMM pair per slice directly on strided views of the token
// buffer and stores only the probability matrices; the backward replays the
// standard softmax-attention adjoints.  joint_attention over all T*N tokens
// exists as a reference for equivalence and cost comparisons.
//
// A thread-local counter tallies multiply-accumulates of the score and
// apply GEMMs (forward only), so relative attention cost can be measured.
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include "spikeformer/init.hpp"
#include "spikeformer/neurons.hpp"
#include "spikeformer/nn_ops.hpp"
#include "spikeformer/rng.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

enum class AttentionAxis { time, space };

// MACs spent in attention score/apply GEMMs since the last reset.
inline std::uint64_t& attention_mac_count() {
  thread_local std::uint64_t count = 0;
  return count;
}
inline void reset_attention_mac_count() { attention_mac_count() = 0; }

namespace detail {

template <typename S>
using StridedMap = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using CStridedMap = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;

template <typename S>
void check_token_tensor(const Tensor<S>& t, const char* who) {
  if (t.rank() != 4)
    throw std::invalid_argument(std::string(who) + ": tokens must be [T,B,N,D], got " +
                                shape_str(t.shape()));
}

}  // namespace detail

// Multi-head scaled dot-product attention along one axis of [T,B,N,D].
// q, k, v must share shapes; the head dimension splits D.
template <typename S>
Tensor<S> attend(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, Index heads,
                 AttentionAxis axis) {
  detail::check_token_tensor(q, "attend");
  detail::check_same_shape(q, k, "attend(q,k)");
  detail::check_same_shape(q, v, "attend(q,v)");
  const Index t = q.extent(0), b = q.extent(1), n = q.extent(2), d = q.extent(3);
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("attend: embedding dim " + std::to_string(d) +
                                " is not divisible into " + std::to_string(heads) + " heads");
  const Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const Index len = axis == AttentionAxis::time ? t : n;         // attention span
  const Index groups = axis == AttentionAxis::time ? b * n : t * b;
  const Index row_stride = axis == AttentionAxis::time ? b * n * d : d;

  // flat offset of the first row of a (group, head) slice (captured by value:
  // the backward closure outlives this scope)
  auto slice_offset = [axis, n, d, dh](Index g, Index h) -> Index {
    if (axis == AttentionAxis::time) {
      const Index bi = g / n, p = g % n;
      return (bi * n + p) * d + h * dh;
    }
    return g * n * d + h * dh;  // g enumerates (t, b) pairs contiguously
  };

  Tensor<S> y = Tensor<S>::zeros(q.shape());
  auto probs = std::make_shared<AlignedVec<S>>(
      static_cast<std::size_t>(groups * heads * len * len));
  {
    detail::MatRM<S> scores(len, len);
    for (Index g = 0; g < groups; ++g) {
      for (Index h = 0; h < heads; ++h) {
        const Index off = slice_offset(g, h);
        detail::CStridedMap<S> Q(q.data() + off, len, dh, Eigen::OuterStride<>(row_stride));
        detail::CStridedMap<S> K(k.data() + off, len, dh, Eigen::OuterStride<>(row_stride));
        detail::CStridedMap<S> V(v.data() + off, len, dh, Eigen::OuterStride<>(row_stride));
        scores.noalias() = Q * K.transpose();
        scores *= scale;
        S* a = probs->data() + (g * heads + h) * len * len;
        for (Index r = 0; r < len; ++r) {
          S m = scores(r, 0);
          for (Index c = 1; c < len; ++c) m = std::max(m, scores(r, c));
          S sum = S(0);
          for (Index c = 0; c < len; ++c) {
            const S e = std::exp(scores(r, c) - m);
            a[r * len + c] = e;
            sum += e;
          }
          const S inv = S(1) / sum;
          for (Index c = 0; c < len; ++c) a[r * len + c] *= inv;
        }
        detail::CMap<S> A(a, len, len);
        detail::StridedMap<S> O(y.data() + off, len, dh, Eigen::OuterStride<>(row_stride));
        O.noalias() = A * V;
        attention_mac_count() += 2ull * static_cast<std::uint64_t>(len) * len * dh;
      }
    }
  }

  if (detail::want_grad<S>({&q, &k, &v})) {
    detail::record(y, [q, k, v, y, probs, groups, heads, len, dh, row_stride, scale,
                       slice_offset]() {
      const bool wq = q.requires_grad(), wk = k.requires_grad(), wv = v.requires_grad();
      S* gq = wq ? q.impl()->ensure_grad() : nullptr;
      S* gk = wk ? k.impl()->ensure_grad() : nullptr;
      S* gv = wv ? v.impl()->ensure_grad() : nullptr;
      detail::MatRM<S> da(len, len), ds(len, len);
      for (Index g = 0; g < groups; ++g) {
        for (Index h = 0; h < heads; ++h) {
          const Index off = slice_offset(g, h);
          detail::CStridedMap<S> GO(y.impl()->grad.data() + off, len, dh,
                                    Eigen::OuterStride<>(row_stride));
          detail::CMap<S> A(probs->data() + (g * heads + h) * len * len, len, len);
          if (gv) {
            detail::StridedMap<S> GV(gv + off, len, dh, Eigen::OuterStride<>(row_stride));
            GV.noalias() += A.transpose() * GO;
          }
          if (wq || wk) {
            detail::CStridedMap<S> V(v.data() + off, len, dh, Eigen::OuterStride<>(row_stride));
            da.noalias() = GO * V.transpose();
            // softmax adjoint, row by row
            for (Index r = 0; r < len; ++r) {
              S dot = S(0);
              for (Index c = 0; c < len; ++c) dot += da(r, c) * A(r, c);
              for (Index c = 0; c < len; ++c) ds(r, c) = A(r, c) * (da(r, c) - dot);
            }
            if (gq) {
              detail::CStridedMap<S> K(k.data() + off, len, dh,
                                       Eigen::OuterStride<>(row_stride));
              detail::StridedMap<S> GQ(gq + off, len, dh, Eigen::OuterStride<>(row_stride));
              GQ.noalias() += scale * (ds * K);
            }
            if (gk) {
              detail::CStridedMap<S> Q(q.data() + off, len, dh,
                                       Eigen::OuterStride<>(row_stride));
              detail::StridedMap<S> GK(gk + off, len, dh, Eigen::OuterStride<>(row_stride));
              GK.noalias() += scale * (ds.transpose() * Q);
            }
          }
        }
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> temporal_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                             Index heads) {
  return attend(q, k, v, heads, AttentionAxis::time);
}

template <typename S>
Tensor<S> spatial_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                            Index heads) {
  return attend(q, k, v, heads, AttentionAxis::space);
}

// Reference: full attention over all T*N tokens of each batch element
// (forward only, no tape node).  Used to compare outputs and GEMM cost
// against the divided form.
template <typename S>
Tensor<S> joint_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                          Index heads) {
  detail::check_token_tensor(q, "joint_attention");
  detail::check_same_shape(q, k, "joint_attention(q,k)");
  detail::check_same_shape(q, v, "joint_attention(q,v)");
  const Index t = q.extent(0), b = q.extent(1), n = q.extent(2), d = q.extent(3);
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("joint_attention: embedding dim " + std::to_string(d) +
                                " is not divisible into " + std::to_string(heads) + " heads");
  const Index dh = d / heads;
  const Index m = t * n;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Tensor<S> y = Tensor<S>::zeros(q.shape());
  detail::MatRM<S> Q(m, dh), K(m, dh), V(m, dh), A(m, m), O(m, dh);
  for (Index bi = 0; bi < b; ++bi) {
    for (Index h = 0; h < heads; ++h) {
      // gather the (batch, head) slice into contiguous rows, token (ti,p)
      // flattened to row ti*n + p
      for (Index ti = 0; ti < t; ++ti)
        for (Index p = 0; p < n; ++p) {
          const Index src = ((ti * b + bi) * n + p) * d + h * dh;
          const Index row = ti * n + p;
          for (Index j = 0; j < dh; ++j) {
            Q(row, j) = q.data()[src + j];
            K(row, j) = k.data()[src + j];
            V(row, j) = v.data()[src + j];
          }
        }
      A.noalias() = Q * K.transpose();
      A *= scale;
      for (Index r = 0; r < m; ++r) {
        S mx = A(r, 0);
        for (Index c = 1; c < m; ++c) mx = std::max(mx, A(r, c));
        S sum = S(0);
        for (Index c = 0; c < m; ++c) {
          A(r, c) = std::exp(A(r, c) - mx);
          sum += A(r, c);
        }
        A.row(r) /= sum;
      }
      O.noalias() = A * V;
      attention_mac_count() += 2ull * static_cast<std::uint64_t>(m) * m * dh;
      for (Index ti = 0; ti < t; ++ti)
        for (Index p = 0; p < n; ++p) {
          const Index dst = ((ti * b + bi) * n + p) * d + h * dh;
          const Index row = ti * n + p;
          for (Index j = 0; j < dh; ++j) y.data()[dst + j] = O(row, j);
        }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// drop-path: zero whole residual branches per batch element
// ---------------------------------------------------------------------------

// x is [T,B,...]; each batch element's branch survives with probability
// 1-rate and is rescaled by 1/(1-rate) so the expectation is unchanged.
// Identity when not training or rate == 0.
template <typename S>
Tensor<S> droppath(const Tensor<S>& x, double rate, bool training, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("droppath: rate must lie in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  if (x.rank() < 2)
    throw std::invalid_argument("droppath: need [T,B,...], got " + shape_str(x.shape()));
  const Index t = x.extent(0), b = x.extent(1);
  const Index inner = x.numel() / (t * b);
  const S keep_scale = S(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(b));
  for (Index bi = 0; bi < b; ++bi)
    (*mask)[static_cast<std::size_t>(bi)] = rng.bernoulli(1.0 - rate) ? keep_scale : S(0);
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* yv = y.data();
  for (Index ti = 0; ti < t; ++ti)
    for (Index bi = 0; bi < b; ++bi) {
      const S mval = (*mask)[static_cast<std::size_t>(bi)];
      const Index base = (ti * b + bi) * inner;
      for (Index i = 0; i < inner; ++i) yv[base + i] = xv[base + i] * mval;
    }
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, mask, t, b, inner]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      for (Index ti = 0; ti < t; ++ti)
        for (Index bi = 0; bi < b; ++bi) {
          const S mval = (*mask)[static_cast<std::size_t>(bi)];
          const Index base = (ti * b + bi) * inner;
          for (Index i = 0; i < inner; ++i) gx[base + i] += gy[base + i] * mval;
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// sequence pooling: attention-weighted token average per frame
// ---------------------------------------------------------------------------

// out[t,b,:] = sum_p a[t,b,p] * z[t,b,p,:] with a given as [T,B,N,1]
template <typename S>
Tensor<S> weighted_token_sum(const Tensor<S>& z, const Tensor<S>& a) {
  detail::check_token_tensor(z, "weighted_token_sum");
  const Index t = z.extent(0), b = z.extent(1), n = z.extent(2), d = z.extent(3);
  if (a.rank() != 4 || a.extent(0) != t || a.extent(1) != b || a.extent(2) != n ||
      a.extent(3) != 1)
    throw std::invalid_argument("weighted_token_sum: weights must be [T,B,N,1], got " +
                                shape_str(a.shape()));
  Tensor<S> y = Tensor<S>::zeros({t, b, d});
  const S* zv = z.data();
  const S* av = a.data();
  S* yv = y.data();
  for (Index tb = 0; tb < t * b; ++tb) {
    const S* zr = zv + tb * n * d;
    const S* ar = av + tb * n;
    S* yr = yv + tb * d;
    for (Index p = 0; p < n; ++p) {
      const S w = ar[p];
      for (Index j = 0; j < d; ++j) yr[j] += w * zr[p * d + j];
    }
  }
  if (detail::want_grad<S>({&z, &a})) {
    detail::record(y, [z, a, y, t, b, n, d]() {
      const S* gy = y.impl()->grad.data();
      const S* zv = z.data();
      const S* av = a.data();
      S* gz = z.requires_grad() ? z.impl()->ensure_grad() : nullptr;
      S* ga = a.requires_grad() ? a.impl()->ensure_grad() : nullptr;
      for (Index tb = 0; tb < t * b; ++tb) {
        const S* gyr = gy + tb * d;
        for (Index p = 0; p < n; ++p) {
          if (gz) {
            const S w = av[tb * n + p];
            S* gzr = gz + (tb * n + p) * d;
            for (Index j = 0; j < d; ++j) gzr[j] += w * gyr[j];
          }
          if (ga) {
            const S* zr = zv + (tb * n + p) * d;
            S dot = S(0);
            for (Index j = 0; j < d; ++j) dot += zr[j] * gyr[j];
            ga[tb * n + p] += dot;
          }
        }
      }
    });
  }
  return y;
}

// Learned scalar score per token, softmax over tokens, weighted sum:
// [T,B,N,D] -> [T,B,D].
template <typename S>
Tensor<S> sequence_pool(const Tensor<S>& z, const Tensor<S>& w) {
  if (w.rank() != 2 || w.extent(1) != 1)
    throw std::invalid_argument("sequence_pool: weight must be [D,1], got " +
                                shape_str(w.shape()));
  Tensor<S> scores = linear(z, w);
  Tensor<S> a = softmax(scores, 2);
  return weighted_token_sum(z, a);
}

// ---------------------------------------------------------------------------
// transformer block: temporal MSA, spatial MSA, spiking MLP
// ---------------------------------------------------------------------------

template <typename S>
struct AttentionSublayer {
  Tensor<S> ln_gamma, ln_beta;
  Tensor<S> wq, wk, wv, wo;  // all [D,D], bias-free

  AttentionSublayer() = default;
  AttentionSublayer(Index dim, RngStream& rng)
      : ln_gamma(Tensor<S>::filled({dim}, S(1)).set_requires_grad()),
        ln_beta(zeros_param<S>({dim})),
        wq(fan_in_uniform<S>({dim, dim}, dim, rng)),
        wk(fan_in_uniform<S>({dim, dim}, dim, rng)),
        wv(fan_in_uniform<S>({dim, dim}, dim, rng)),
        wo(fan_in_uniform<S>({dim, dim}, dim, rng)) {}
};

template <typename S>
struct TransformerBlock {
  AttentionSublayer<S> temporal, spatial;
  Tensor<S> mlp_ln_gamma, mlp_ln_beta;
  Tensor<S> fc1_w, fc1_b, fc2_w, fc2_b;
  NeuronCell<S> mlp_neuron;
  Index heads = 1;
  double droppath_rate = 0.0;

  TransformerBlock(Index dim, Index n_heads, Index mlp_hidden, const NeuronConfig& ncfg,
                   double droppath, RngStream& rng)
      : temporal(dim, rng),
        spatial(dim, rng),
        mlp_ln_gamma(Tensor<S>::filled({dim}, S(1)).set_requires_grad()),
        mlp_ln_beta(zeros_param<S>({dim})),
        fc1_w(fan_in_uniform<S>({dim, mlp_hidden}, dim, rng)),
        fc1_b(fan_in_uniform<S>({mlp_hidden}, dim, rng)),
        fc2_w(fan_in_uniform<S>({mlp_hidden, dim}, mlp_hidden, rng)),
        fc2_b(fan_in_uniform<S>({dim}, mlp_hidden, rng)),
        mlp_neuron(ncfg),
        heads(n_heads),
        droppath_rate(droppath) {}
};

template <typename S>
Tensor<S> attention_sublayer_forward(const Tensor<S>& z, const AttentionSublayer<S>& sl,
                                     Index heads, AttentionAxis axis) {
  Tensor<S> zn = layer_norm(z, sl.ln_gamma, sl.ln_beta);
  Tensor<S> q = linear(zn, sl.wq);
  Tensor<S> k = linear(zn, sl.wk);
  Tensor<S> v = linear(zn, sl.wv);
  Tensor<S> att = attend(q, k, v, heads, axis);
  return linear(att, sl.wo);
}

// z' = z + droppath(TMSA(LN(z)));  z'' = z' + droppath(SMSA(LN(z')));
// out = z'' + droppath(FC2(SN(FC1(LN(z'')))))
template <typename S>
Tensor<S> transformer_block(const Tensor<S>& z, const TransformerBlock<S>& blk, bool training,
                            RngStream& rng) {
  Tensor<S> t_out =
      attention_sublayer_forward(z, blk.temporal, blk.heads, AttentionAxis::time);
  Tensor<S> z1 = add(z, droppath(t_out, blk.droppath_rate, training, rng));
  Tensor<S> s_out =
      attention_sublayer_forward(z1, blk.spatial, blk.heads, AttentionAxis::space);
  Tensor<S> z2 = add(z1, droppath(s_out, blk.droppath_rate, training, rng));
  Tensor<S> h = linear(layer_norm(z2, blk.mlp_ln_gamma, blk.mlp_ln_beta), blk.fc1_w, blk.fc1_b);
  Tensor<S> spikes = neuron_sequence(h, blk.mlp_neuron);
  Tensor<S> m_out = linear(spikes, blk.fc2_w, blk.fc2_b);
  return add(z2, droppath(m_out, blk.droppath_rate, training, rng));
}

}  // namespace spikeformer
