// Reverse-mode autodiff tensor engine.
//
// A Tensor<S> is a cheap shared handle to a dense row-major buffer plus an
// optional gradient buffer.  While a Tape is alive (RAII scope), every op
// that consumes a tensor requiring gradients appends one node holding a
// backward closure; Tape::backward replays the nodes in reverse creation
// order, which is a valid topological order by construction.  No tape means
// evaluation mode: ops run without any recording overhead.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace spikeformer {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void check_shape_valid(const Shape& shape, const char* who) {
  if (shape.empty())
    throw std::invalid_argument(std::string(who) + ": rank-0 shapes are not supported, use {1}");
  for (Index e : shape)
    if (e <= 0)
      throw std::invalid_argument(std::string(who) + ": non-positive extent in shape " + shape_str(shape));
}

// Gradient-checking mode: while enabled, the spike nonlinearity evaluates its
// smooth sigmoid in the forward pass and stop_gradient lets gradients flow,
// so the whole graph becomes differentiable and finite differences are a
// valid oracle.  Training/eval always run with this off (hard threshold,
// detached reset).
inline bool& surrogate_forward_mode() {
  thread_local bool mode = false;
  return mode;
}

struct SurrogateForwardGuard {
  bool prev;
  explicit SurrogateForwardGuard(bool on = true) : prev(surrogate_forward_mode()) {
    surrogate_forward_mode() = on;
  }
  ~SurrogateForwardGuard() { surrogate_forward_mode() = prev; }
  SurrogateForwardGuard(const SurrogateForwardGuard&) = delete;
  SurrogateForwardGuard& operator=(const SurrogateForwardGuard&) = delete;
};

// 64-byte-aligned storage for every value, gradient, and GEMM scratch buffer.
// Holding all math buffers at one fixed alignment keeps Eigen's vectorized
// kernels on the same code path no matter what the allocator did earlier in
// the process, which keeps float accumulation order — and therefore whole
// training trajectories — bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(alignment));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const noexcept {
    return false;
  }
};

template <typename S>
using AlignedVec = std::vector<S, AlignedAllocator<S>>;

template <typename S>
struct TensorImpl {
  static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");
  Shape shape;
  AlignedVec<S> value;
  AlignedVec<S> grad;  // empty means "identically zero, never touched"
  bool requires_grad = false;

  Index numel() const { return static_cast<Index>(value.size()); }

  // Lazily allocated, zero-filled gradient buffer.
  S* ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad.data();
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), S(0)); }

  static Tensor filled(Shape shape, S v) {
    check_shape_valid(shape, "Tensor");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), v);
    return t;
  }

  static Tensor from(Shape shape, AlignedVec<S> data) {
    check_shape_valid(shape, "Tensor");
    if (shape_numel(shape) != static_cast<Index>(data.size()))
      throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(data);
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<S> data) {
    return from(std::move(shape), AlignedVec<S>(data.begin(), data.end()));
  }

  static Tensor scalar(S v) { return filled({1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index numel() const { return impl_->numel(); }
  Index extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }

  S* data() { return impl_->value.data(); }
  const S* data() const { return impl_->value.data(); }
  AlignedVec<S>& values() { return impl_->value; }
  const AlignedVec<S>& values() const { return impl_->value; }

  S item() const {
    if (numel() != 1)
      throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  // Gradient as read-only data; empty buffer reads as all zeros.
  bool has_grad() const { return !impl_->grad.empty(); }
  const AlignedVec<S>& grad() const { return impl_->grad; }
  S grad_at(Index i) const { return impl_->grad.empty() ? S(0) : impl_->grad[static_cast<std::size_t>(i)]; }
  void zero_grad() { impl_->grad.clear(); }

  TensorImpl<S>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<S>>& handle() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
};

// Tape of backward closures.  Constructing one makes it current for the
// thread (nesting restores the previous on destruction); ops check
// Tape::current() to decide whether to record.
template <typename S>
class Tape {
 public:
  Tape() : prev_(current_slot()) { current_slot() = this; }
  ~Tape() { current_slot() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_slot(); }

  void record(const Tensor<S>& out, std::function<void()> backward) {
    nodes_.push_back(Node{out.handle(), std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, in
  // reverse creation order.  Nodes whose output never received a gradient
  // are skipped (their contribution is identically zero).
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar tensor, got shape " +
                                  shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::invalid_argument("backward: loss does not depend on any tracked parameter");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (!it->out->grad.empty()) it->backward();
  }

 private:
  struct Node {
    std::shared_ptr<TensorImpl<S>> out;  // keeps the graph alive
    std::function<void()> backward;
  };

  static Tape*& current_slot() {
    thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<Node> nodes_;
  Tape* prev_;
};

namespace detail {

template <typename S>
bool want_grad(std::initializer_list<const Tensor<S>*> inputs) {
  if (!Tape<S>::current()) return false;
  for (const Tensor<S>* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

template <typename S>
void record(const Tensor<S>& out, std::function<void()> backward) {
  const_cast<Tensor<S>&>(out).set_requires_grad(true);
  Tape<S>::current()->record(out, std::move(backward));
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

// Generic unary op: y[i] = f(x[i]); backward dX[i] += dY[i] * df(x[i], y[i]).
template <typename S, class Fwd, class Dv>
Tensor<S> unary_op(const Tensor<S>& x, Fwd f, Dv df) {
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* yv = y.data();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) yv[i] = f(xv[i]);
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, df]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      const S* xv = x.data();
      const S* yv = y.data();
      const Index n = x.numel();
      for (Index i = 0; i < n; ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
    });
  }
  return y;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* yv = y.data();
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) yv[i] = av[i] + bv[i];
  if (detail::want_grad<S>({&a, &b})) {
    detail::record(y, [a, b, y]() {
      const S* gy = y.impl()->grad.data();
      const Index n = y.numel();
      if (a.requires_grad()) {
        S* ga = a.impl()->ensure_grad();
        for (Index i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        S* gb = b.impl()->ensure_grad();
        for (Index i = 0; i < n; ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* yv = y.data();
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) yv[i] = av[i] - bv[i];
  if (detail::want_grad<S>({&a, &b})) {
    detail::record(y, [a, b, y]() {
      const S* gy = y.impl()->grad.data();
      const Index n = y.numel();
      if (a.requires_grad()) {
        S* ga = a.impl()->ensure_grad();
        for (Index i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        S* gb = b.impl()->ensure_grad();
        for (Index i = 0; i < n; ++i) gb[i] -= gy[i];
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<S> y = Tensor<S>::zeros(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* yv = y.data();
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) yv[i] = av[i] * bv[i];
  if (detail::want_grad<S>({&a, &b})) {
    detail::record(y, [a, b, y]() {
      const S* gy = y.impl()->grad.data();
      const S* av = a.data();
      const S* bv = b.data();
      const Index n = y.numel();
      if (a.requires_grad()) {
        S* ga = a.impl()->ensure_grad();
        for (Index i = 0; i < n; ++i) ga[i] += gy[i] * bv[i];
      }
      if (b.requires_grad()) {
        S* gb = b.impl()->ensure_grad();
        for (Index i = 0; i < n; ++i) gb[i] += gy[i] * av[i];
      }
    });
  }
  return y;
}

// y = scale * x + shift with compile-time constants; covers negation,
// constant offsets and 1-x style expressions in one op.
template <typename S>
Tensor<S> affine(const Tensor<S>& x, S scale, S shift) {
  return unary_op(
      x, [scale, shift](S v) { return scale * v + shift; },
      [scale](S, S) { return scale; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return unary_op(
      x,
      [](S v) {
        // log(1+e^v), evaluated to avoid overflow for large |v|
        return v > S(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      },
      [](S v, S) { return S(1) / (S(1) + std::exp(-v)); });
}

template <typename S>
Tensor<S> reciprocal(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return S(1) / v; }, [](S, S y) { return -y * y; });
}

// Broadcast multiply by a 1-element tensor (e.g. a learned rate).
template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.numel() != 1)
    throw std::invalid_argument("mul_scalar: scale must have a single element, got shape " +
                                shape_str(s.shape()));
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  const S sv = s.data()[0];
  const S* xv = x.data();
  S* yv = y.data();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) yv[i] = xv[i] * sv;
  if (detail::want_grad<S>({&x, &s})) {
    detail::record(y, [x, s, y]() {
      const S* gy = y.impl()->grad.data();
      const Index n = y.numel();
      if (x.requires_grad()) {
        S* gx = x.impl()->ensure_grad();
        const S sv = s.data()[0];
        for (Index i = 0; i < n; ++i) gx[i] += gy[i] * sv;
      }
      if (s.requires_grad()) {
        S acc = S(0);
        const S* xv = x.data();
        for (Index i = 0; i < n; ++i) acc += gy[i] * xv[i];
        s.impl()->ensure_grad()[0] += acc;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Spike nonlinearity and stop-gradient
// ---------------------------------------------------------------------------

struct SurrogateConfig {
  double alpha = 2.0;  // sharpness of the arctan surrogate
};

namespace detail {

template <typename S>
S surrogate_sigma(S x, S alpha) {
  const S u = std::numbers::pi_v<S> / S(2) * alpha * x;
  return std::atan(u) / std::numbers::pi_v<S> + S(0.5);
}

template <typename S>
S surrogate_sigma_prime(S x, S alpha) {
  const S u = std::numbers::pi_v<S> / S(2) * alpha * x;
  return alpha / (S(2) * (S(1) + u * u));
}

}  // namespace detail

// Heaviside spike with arctan surrogate gradient: forward emits 1 for x > 0
// and 0 otherwise; backward multiplies by sigma'(x) = alpha / (2(1+(pi/2
// alpha x)^2)).  In surrogate-forward mode the forward itself evaluates the
// smooth sigma so finite differences see exactly the function the backward
// pass differentiates.
template <typename S>
Tensor<S> surrogate_spike(const Tensor<S>& x, const SurrogateConfig& cfg = {}) {
  if (!(cfg.alpha > 0.0))
    throw std::invalid_argument("surrogate_spike: alpha must be positive, got " +
                                std::to_string(cfg.alpha));
  const S alpha = static_cast<S>(cfg.alpha);
  const S* xv = x.data();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i)
    if (!std::isfinite(xv[i]))
      throw std::runtime_error("surrogate_spike: non-finite membrane input at flat index " +
                               std::to_string(i));
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  S* yv = y.data();
  if (surrogate_forward_mode()) {
    for (Index i = 0; i < n; ++i) yv[i] = detail::surrogate_sigma(xv[i], alpha);
  } else {
    for (Index i = 0; i < n; ++i) yv[i] = xv[i] > S(0) ? S(1) : S(0);
  }
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, alpha]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      const S* xv = x.data();
      const Index n = x.numel();
      for (Index i = 0; i < n; ++i) gx[i] += gy[i] * detail::surrogate_sigma_prime(xv[i], alpha);
    });
  }
  return y;
}

// Detaches x from the graph: the value passes through, gradients do not.
// In surrogate-forward mode it degenerates to an identity so the graph stays
// differentiable end to end for finite-difference checking.
template <typename S>
Tensor<S> stop_gradient(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::from(x.shape(), x.values());
  if (surrogate_forward_mode() && detail::want_grad<S>({&x})) {
    detail::record(y, [x, y]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      const Index n = x.numel();
      for (Index i = 0; i < n; ++i) gx[i] += gy[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Copy-reshape: same number of elements, new extents, pass-through gradient.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  check_shape_valid(shape, "reshape");
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  Tensor<S> y = Tensor<S>::from(std::move(shape), x.values());
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      const Index n = x.numel();
      for (Index i = 0; i < n; ++i) gx[i] += gy[i];
    });
  }
  return y;
}

// x[i, ...] for a leading index i: shape [d0, rest...] -> [rest...].
template <typename S>
Tensor<S> slice0(const Tensor<S>& x, Index i) {
  if (x.rank() < 2)
    throw std::invalid_argument("slice0: need rank >= 2, got shape " + shape_str(x.shape()));
  const Index d0 = x.extent(0);
  if (i < 0 || i >= d0)
    throw std::invalid_argument("slice0: index " + std::to_string(i) + " out of range [0," +
                                std::to_string(d0) + ")");
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const Index block = shape_numel(rest);
  Tensor<S> y = Tensor<S>::zeros(rest);
  std::copy_n(x.data() + i * block, block, y.data());
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, i, block]() {
      S* gx = x.impl()->ensure_grad() + i * block;
      const S* gy = y.impl()->grad.data();
      for (Index k = 0; k < block; ++k) gx[k] += gy[k];
    });
  }
  return y;
}

// Stacks equally-shaped tensors along a new leading axis.
template <typename S>
Tensor<S> stack0(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack0: nothing to stack");
  const Shape& inner = parts[0].shape();
  for (const auto& p : parts) detail::check_same_shape(p, parts[0], "stack0");
  Shape shape;
  shape.push_back(static_cast<Index>(parts.size()));
  shape.insert(shape.end(), inner.begin(), inner.end());
  const Index block = shape_numel(inner);
  Tensor<S> y = Tensor<S>::zeros(shape);
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy_n(parts[i].data(), block, y.data() + static_cast<Index>(i) * block);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (Tape<S>::current() && any) {
    detail::record(y, [parts, y, block]() {
      const S* gy = y.impl()->grad.data();
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!parts[i].requires_grad()) continue;
        S* gp = parts[i].impl()->ensure_grad();
        const S* src = gy + static_cast<Index>(i) * block;
        for (Index k = 0; k < block; ++k) gp[k] += src[k];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = S(0);
  const S* xv = x.data();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) acc += xv[i];
  Tensor<S> y = Tensor<S>::scalar(acc);
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y]() {
      S* gx = x.impl()->ensure_grad();
      const S g = y.impl()->grad[0];
      const Index n = x.numel();
      for (Index i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

// Mean over the leading axis: [d0, rest...] -> [rest...].
template <typename S>
Tensor<S> mean0(const Tensor<S>& x) {
  if (x.rank() < 2)
    throw std::invalid_argument("mean0: need rank >= 2, got shape " + shape_str(x.shape()));
  const Index d0 = x.extent(0);
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const Index block = shape_numel(rest);
  Tensor<S> y = Tensor<S>::zeros(rest);
  S* yv = y.data();
  const S* xv = x.data();
  const S inv = S(1) / static_cast<S>(d0);
  for (Index i = 0; i < d0; ++i)
    for (Index k = 0; k < block; ++k) yv[k] += xv[i * block + k];
  for (Index k = 0; k < block; ++k) yv[k] *= inv;
  if (detail::want_grad<S>({&x})) {
    detail::record(y, [x, y, d0, block, inv]() {
      S* gx = x.impl()->ensure_grad();
      const S* gy = y.impl()->grad.data();
      for (Index i = 0; i < d0; ++i)
        for (Index k = 0; k < block; ++k) gx[i * block + k] += gy[k] * inv;
    });
  }
  return y;
}

}  // namespace spikeformer
