// Parameter initializers.  Every draw comes from the caller's RngStream in
// flat index order, so a fixed seed reproduces parameters bit for bit.
#pragma once

#include <cmath>

#include "spikeformer/rng.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

// U(-bound, bound), marked trainable.
template <typename S>
Tensor<S> uniform_param(Shape shape, double bound, RngStream& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  S* p = t.data();
  const Index n = t.numel();
  for (Index i = 0; i < n; ++i) p[i] = static_cast<S>(rng.uniform(-bound, bound));
  t.set_requires_grad();
  return t;
}

// The usual fan-in scaling: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
Tensor<S> fan_in_uniform(Shape shape, Index fan_in, RngStream& rng) {
  if (fan_in <= 0) throw std::invalid_argument("fan_in_uniform: fan_in must be positive");
  return uniform_param<S>(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

// N(0, std^2) clipped to two standard deviations (positional tables).
template <typename S>
Tensor<S> trunc_normal_param(Shape shape, double stddev, RngStream& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  S* p = t.data();
  const Index n = t.numel();
  for (Index i = 0; i < n; ++i) p[i] = static_cast<S>(rng.truncated_normal(0.0, stddev));
  t.set_requires_grad();
  return t;
}

template <typename S>
Tensor<S> zeros_param(Shape shape) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  t.set_requires_grad();
  return t;
}

}  // namespace spikeformer
