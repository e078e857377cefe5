// Spiking neuron layers.
//
// All four modes integrate a leaky membrane over the leading time axis:
//
//   H[t] = V[t-1] + (1/tau) * (X[t] - (V[t-1] - v_reset))    charge
//   S[t] = heaviside(H[t] - v_threshold)                      fire
//   V[t] = H[t] * (1 - S[t]) + v_reset * S[t]                 reset
//
// lif/plif emit the spike train S, liaf/pliaf emit relu(H) while the reset
// still uses the thresholded spikes.  The p-variants learn tau through
// tau = 1 + softplus(p), keeping the leak rate in (0, 1).  The spike factor
// in the reset is detached so gradients reach earlier steps only through the
// membrane, matching the surrogate-gradient training rule; in
// surrogate-forward mode the smooth sigma is used end to end instead so the
// whole unroll is finite-difference checkable.
//
// neuron_step is built from the audited primitive ops and serves as the
// reference; neuron_sequence is a fused single-node version of the same
// computation (one tape node per layer instead of ~10 per time step), and
// the test suite pins the two to each other exactly.
#pragma once

#include <memory>
#include <utility>

#include "spikeformer/tensor.hpp"

namespace spikeformer {

enum class NeuronMode {
  lif,       // fixed leak, spike output
  plif,      // learned leak, spike output
  liaf,      // fixed leak, analog relu(H) output
  pliaf,     // learned leak, analog output
  relu_twin  // stateless relu; test-only twin for ablating the dynamics
};

inline bool neuron_spike_output(NeuronMode m) {
  return m == NeuronMode::lif || m == NeuronMode::plif;
}

inline bool neuron_learned_leak(NeuronMode m) {
  return m == NeuronMode::plif || m == NeuronMode::pliaf;
}

inline const char* neuron_mode_name(NeuronMode m) {
  switch (m) {
    case NeuronMode::lif: return "lif";
    case NeuronMode::plif: return "plif";
    case NeuronMode::liaf: return "liaf";
    case NeuronMode::pliaf: return "pliaf";
    case NeuronMode::relu_twin: return "relu";
  }
  return "?";
}

inline NeuronMode neuron_mode_from_name(const std::string& s) {
  if (s == "lif") return NeuronMode::lif;
  if (s == "plif") return NeuronMode::plif;
  if (s == "liaf") return NeuronMode::liaf;
  if (s == "pliaf") return NeuronMode::pliaf;
  if (s == "relu") return NeuronMode::relu_twin;
  throw std::invalid_argument("unknown neuron mode '" + s +
                              "' (expected lif|plif|liaf|pliaf|relu)");
}

struct NeuronConfig {
  NeuronMode mode = NeuronMode::plif;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double tau = 2.0;  // fixed-leak modes only; learned modes start here
  SurrogateConfig surrogate{};
};

// One neuron layer's learnable state: the tau parameter for learned-leak
// modes (absent otherwise).  Initialized so that 1 + softplus(p) equals
// cfg.tau exactly: p = log(exp(tau - 1) - 1).
template <typename S>
struct NeuronCell {
  NeuronConfig cfg;
  Tensor<S> tau_param;  // defined only for plif/pliaf

  explicit NeuronCell(NeuronConfig c = {}) : cfg(c) {
    if (!(cfg.tau > 1.0))
      throw std::invalid_argument("neuron: tau must exceed 1 so the leak rate stays below 1, got " +
                                  std::to_string(cfg.tau));
    if (!(cfg.v_threshold > cfg.v_reset))
      throw std::invalid_argument("neuron: v_threshold must exceed v_reset");
    if (neuron_learned_leak(cfg.mode)) {
      const double p = std::log(std::exp(cfg.tau - 1.0) - 1.0);
      tau_param = Tensor<S>::scalar(static_cast<S>(p));
      tau_param.set_requires_grad();
    }
  }

  // Leak rate 1/tau as a scalar tensor; for learned modes this is a small
  // graph through softplus so gradients reach tau_param.
  Tensor<S> rate() const {
    if (neuron_learned_leak(cfg.mode))
      return reciprocal(affine(softplus(tau_param), S(1), S(1)));
    return Tensor<S>::scalar(static_cast<S>(1.0 / cfg.tau));
  }

  double effective_tau() const {
    if (!neuron_learned_leak(cfg.mode)) return cfg.tau;
    const double p = static_cast<double>(tau_param.item());
    const double sp = p > 0 ? p + std::log1p(std::exp(-p)) : std::log1p(std::exp(p));
    return 1.0 + sp;
  }
};

// ---------------------------------------------------------------------------
// Single step, composed from primitive ops (reference path)
// ---------------------------------------------------------------------------

template <typename S>
struct NeuronStepResult {
  Tensor<S> out;
  Tensor<S> v;  // membrane after reset, feeds the next step
};

template <typename S>
NeuronStepResult<S> neuron_step(const Tensor<S>& x, const Tensor<S>& v,
                                const NeuronCell<S>& cell, const Tensor<S>& rate) {
  if (cell.cfg.mode == NeuronMode::relu_twin)
    throw std::invalid_argument("neuron_step: the relu twin has no membrane state");
  detail::check_same_shape(x, v, "neuron_step");
  const S vth = static_cast<S>(cell.cfg.v_threshold);
  const S vr = static_cast<S>(cell.cfg.v_reset);
  // charge: H = V + rate * (X - (V - vr))
  Tensor<S> pre = sub(x, affine(v, S(1), -vr));
  Tensor<S> h = add(v, mul_scalar(pre, rate));
  // fire on the shifted membrane
  Tensor<S> s = surrogate_spike(affine(h, S(1), -vth), cell.cfg.surrogate);
  // reset uses the detached spike: V' = H*(1-sg(S)) + vr*sg(S)
  Tensor<S> sbar = stop_gradient(s);
  Tensor<S> v_next = add(mul(h, affine(sbar, S(-1), S(1))), affine(sbar, vr, S(0)));
  Tensor<S> out = neuron_spike_output(cell.cfg.mode) ? s : relu(h);
  return {out, v_next};
}

template <typename S>
NeuronStepResult<S> neuron_step(const Tensor<S>& x, const Tensor<S>& v,
                                const NeuronCell<S>& cell) {
  return neuron_step(x, v, cell, cell.rate());
}

// ---------------------------------------------------------------------------
// Fused sequence: same math, one tape node, hand-derived reverse pass
// ---------------------------------------------------------------------------

// Observation hook: when set, every neuron_sequence forward on this thread
// reports its output tensor (tests use this to assert spike binarity deep
// inside composed networks).
template <typename S>
std::function<void(const Tensor<S>&)>& neuron_probe() {
  thread_local std::function<void(const Tensor<S>&)> probe;
  return probe;
}

// x: [T, ...]; the membrane starts at v_reset and its final value is
// discarded.  Output has the input's shape: spike train for lif/plif,
// relu(H) for liaf/pliaf.
template <typename S>
Tensor<S> neuron_sequence(const Tensor<S>& x, const NeuronCell<S>& cell) {
  if (cell.cfg.mode == NeuronMode::relu_twin) return relu(x);
  if (x.rank() < 2)
    throw std::invalid_argument("neuron_sequence: need a leading time axis, got shape " +
                                shape_str(x.shape()));
  const Index t_steps = x.extent(0);
  const Index n = x.numel() / t_steps;
  const S vth = static_cast<S>(cell.cfg.v_threshold);
  const S vr = static_cast<S>(cell.cfg.v_reset);
  const S alpha = static_cast<S>(cell.cfg.surrogate.alpha);
  if (!(alpha > S(0))) throw std::invalid_argument("neuron_sequence: surrogate alpha must be positive");
  const bool spike_out = neuron_spike_output(cell.cfg.mode);
  const bool smooth = surrogate_forward_mode();

  Tensor<S> rate = cell.rate();
  const S rv = rate.data()[0];
  if (!(rv > S(0) && rv < S(1)))
    throw std::runtime_error("neuron_sequence: leak rate " + std::to_string(rv) +
                             " left (0,1); tau parameter has diverged");

  // Only the pre-reset membrane is kept; spikes and post-reset values are
  // recomputed from it in the backward pass.
  auto h_hist = std::make_shared<std::vector<S>>(static_cast<std::size_t>(t_steps * n));
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  {
    const S* xv = x.data();
    S* yv = y.data();
    S* hh = h_hist->data();
    std::vector<S> v(static_cast<std::size_t>(n), vr);
    for (Index t = 0; t < t_steps; ++t) {
      const S* xt = xv + t * n;
      S* yt = yv + t * n;
      S* ht = hh + t * n;
      for (Index i = 0; i < n; ++i) {
        const S h = v[i] + rv * (xt[i] - (v[i] - vr));
        if (!std::isfinite(h))
          throw std::runtime_error("neuron_sequence: non-finite membrane at t=" +
                                   std::to_string(t) + ", flat index " + std::to_string(i));
        ht[i] = h;
        const S u = h - vth;
        const S s = smooth ? detail::surrogate_sigma(u, alpha) : (u > S(0) ? S(1) : S(0));
        yt[i] = spike_out ? s : (h > S(0) ? h : S(0));
        v[i] = h * (S(1) - s) + vr * s;
      }
    }
  }

  if (detail::want_grad<S>({&x, &rate})) {
    detail::record(y, [x, rate, y, h_hist, t_steps, n, vth, vr, alpha, spike_out, smooth]() {
      const S rv = rate.data()[0];
      const S* xv = x.data();
      const S* gy = y.impl()->grad.data();
      const S* hh = h_hist->data();
      S* gx = x.requires_grad() ? x.impl()->ensure_grad() : nullptr;
      const bool want_rate = rate.requires_grad();
      S g_rate = S(0);
      std::vector<S> gv(static_cast<std::size_t>(n), S(0));  // dL/dV[t] flowing backwards
      for (Index t = t_steps - 1; t >= 0; --t) {
        const S* ht = hh + t * n;
        const S* hprev = t > 0 ? hh + (t - 1) * n : nullptr;
        const S* xt = xv + t * n;
        const S* gyt = gy + t * n;
        for (Index i = 0; i < n; ++i) {
          const S h = ht[i];
          const S u = h - vth;
          const S s = smooth ? detail::surrogate_sigma(u, alpha) : (u > S(0) ? S(1) : S(0));
          S g_h;
          if (smooth) {
            // V[t] = H(1-S) + vr*S with S = sigma(H - vth): both paths live
            S g_s = gv[i] * (vr - h);
            if (spike_out) g_s += gyt[i];
            g_h = gv[i] * (S(1) - s) + g_s * detail::surrogate_sigma_prime(u, alpha);
            if (!spike_out && h > S(0)) g_h += gyt[i];
          } else {
            // reset path detached: V[t] treats S as a constant
            g_h = gv[i] * (S(1) - s);
            if (spike_out)
              g_h += gyt[i] * detail::surrogate_sigma_prime(u, alpha);
            else if (h > S(0))
              g_h += gyt[i];
          }
          if (want_rate) {
            // H = V' + rate*(X - (V' - vr)) with V' the previous membrane
            S vprev = vr;
            if (hprev) {
              const S hp = hprev[i];
              const S sp =
                  smooth ? detail::surrogate_sigma(hp - vth, alpha) : (hp - vth > S(0) ? S(1) : S(0));
              vprev = hp * (S(1) - sp) + vr * sp;
            }
            g_rate += g_h * (xt[i] - (vprev - vr));
          }
          if (gx) gx[t * n + i] += g_h * rv;
          gv[i] = g_h * (S(1) - rv);
        }
      }
      if (want_rate) rate.impl()->ensure_grad()[0] += g_rate;
    });
  }
  if (neuron_probe<S>()) neuron_probe<S>()(y);
  return y;
}

}  // namespace spikeformer
