// Finite-difference gradient checking.
//
// grad_check runs with surrogate-forward mode enabled, so spike thresholds
// evaluate their smooth sigma and detached reset edges pass gradients —
// the whole graph is then C^1 and central differences are a valid oracle
// for the tape's analytic gradients.  Reported error is
//     max_i |analytic_i - central_i| / max(1, |analytic_i|).
// A non-deterministic function (two evaluations disagreeing bitwise) is
// rejected outright, since finite differences would be meaningless.
#pragma once

#include <algorithm>
#include <cstring>
#include <functional>

#include "spikeformer/tensor.hpp"

namespace spikeformer {

template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> point,
                  double eps = 1e-5) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  SurrogateForwardGuard guard;

  auto eval = [&](const Tensor<S>& x) {
    Tensor<S> y = f(x);
    if (y.numel() != 1)
      throw std::invalid_argument("grad_check: f must return a scalar, got shape " +
                                  shape_str(y.shape()));
    return y;
  };

  // reject nondeterministic functions before trusting finite differences
  {
    const S a = eval(point).item();
    const S b = eval(point).item();
    if (std::memcmp(&a, &b, sizeof(S)) != 0)
      throw std::runtime_error("grad_check: f is not deterministic at the given point (" +
                               std::to_string(a) + " vs " + std::to_string(b) + ")");
  }

  // analytic gradient from one taped pass
  Tensor<S> x = Tensor<S>::from(point.shape(), point.values());
  x.set_requires_grad();
  std::vector<S> analytic;
  {
    Tape<S> tape;
    Tensor<S> y = eval(x);
    tape.backward(y);
    analytic.assign(static_cast<std::size_t>(x.numel()), S(0));
    for (Index i = 0; i < x.numel(); ++i) analytic[static_cast<std::size_t>(i)] = x.grad_at(i);
  }

  // central differences, one coordinate at a time (no tape)
  double max_err = 0.0;
  Tensor<S> probe = Tensor<S>::from(point.shape(), point.values());
  S* pv = probe.data();
  const S h = static_cast<S>(eps);
  for (Index i = 0; i < probe.numel(); ++i) {
    const S saved = pv[i];
    pv[i] = saved + h;
    const S up = eval(probe).item();
    pv[i] = saved - h;
    const S down = eval(probe).item();
    pv[i] = saved;
    const double central = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
    const double a = static_cast<double>(analytic[static_cast<std::size_t>(i)]);
    const double err = std::abs(a - central) / std::max(1.0, std::abs(a));
    if (err > max_err) max_err = err;
  }
  return max_err;
}

// Convenience: check every coordinate of several live parameter tensors of
// one graph builder.  The builder closes over the parameters; analytic
// gradients come from one taped pass, finite differences from perturbing
// each parameter buffer in place.
template <typename S>
double grad_check_params(const std::function<Tensor<S>()>& build,
                         const std::vector<Tensor<S>>& params, double eps = 1e-5) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check_params: eps must be positive");
  SurrogateForwardGuard guard;

  auto eval = [&]() {
    Tensor<S> y = build();
    if (y.numel() != 1)
      throw std::invalid_argument("grad_check_params: builder must return a scalar, got shape " +
                                  shape_str(y.shape()));
    return y.item();
  };

  {
    const S a = eval();
    const S b = eval();
    if (std::memcmp(&a, &b, sizeof(S)) != 0)
      throw std::runtime_error("grad_check_params: builder is not deterministic (" +
                               std::to_string(a) + " vs " + std::to_string(b) + ")");
  }

  std::vector<std::vector<S>> analytic(params.size());
  {
    for (const Tensor<S>& p : params) const_cast<Tensor<S>&>(p).zero_grad();
    Tape<S> tape;
    Tensor<S> y = build();
    tape.backward(y);
    for (std::size_t k = 0; k < params.size(); ++k) {
      analytic[k].assign(static_cast<std::size_t>(params[k].numel()), S(0));
      for (Index i = 0; i < params[k].numel(); ++i)
        analytic[k][static_cast<std::size_t>(i)] = params[k].grad_at(i);
      const_cast<Tensor<S>&>(params[k]).zero_grad();
    }
  }

  double max_err = 0.0;
  const S h = static_cast<S>(eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    S* pv = const_cast<Tensor<S>&>(params[k]).data();
    for (Index i = 0; i < params[k].numel(); ++i) {
      const S saved = pv[i];
      pv[i] = saved + h;
      const S up = eval();
      pv[i] = saved - h;
      const S down = eval();
      pv[i] = saved;
      const double central = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
      const double a = static_cast<double>(analytic[k][static_cast<std::size_t>(i)]);
      const double err = std::abs(a - central) / std::max(1.0, std::abs(a));
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace spikeformer
