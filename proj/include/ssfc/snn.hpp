#pragma once

// Integrate-and-fire neurons, softsign surrogate gradient, direct input
// coding and firing-rate decoding.

#include <cmath>
#include <string>
#include <utility>

#include "ssfc/ops.hpp"

namespace ssfc {

struct IFConfig {
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double surrogate_alpha = 2.0;

  void validate() const {
    if (!(v_threshold > v_reset)) throw Error("IFConfig: v_threshold must exceed v_reset");
    if (!(surrogate_alpha > 0)) throw Error("IFConfig: surrogate_alpha must be positive");
  }
};

/// Softsign surrogate g(x) = (alpha x / (1 + |alpha x|) + 1) / 2.
template <typename T>
T surrogate_value(T x, T alpha) {
  const T ax = alpha * x;
  return T(0.5) * (ax / (T(1) + std::abs(ax)) + T(1));
}

/// dg/dx = alpha / (2 (1 + |alpha x|)^2).
template <typename T>
T surrogate_grad(T x, T alpha) {
  const T d = T(1) + std::abs(alpha * x);
  return alpha / (T(2) * d * d);
}

/// Membrane potentials of one layer, alive for a single forward pass.
template <typename T>
struct IFState {
  Tensor<T> membrane;

  static IFState reset(const Shape& shape, const IFConfig& cfg) {
    return IFState{Tensor<T>(shape, static_cast<T>(cfg.v_reset))};
  }
};

/// One integration step: V <- V + I; positions with V >= threshold spike and
/// hard-reset to v_reset. `pre_reset`, when given, receives V before reset.
template <typename T>
Tensor<T> if_step(IFState<T>& state, const Tensor<T>& current, const IFConfig& cfg, T* pre_reset = nullptr) {
  if (state.membrane.shape() != current.shape()) {
    throw ShapeError("if_step: membrane shape " + to_string(state.membrane.shape()) + " vs input shape " +
                     to_string(current.shape()));
  }
  const T vth = static_cast<T>(cfg.v_threshold), vr = static_cast<T>(cfg.v_reset);
  Tensor<T> spikes(current.shape());
  T* v = state.membrane.ptr();
  const T* in = current.ptr();
  for (std::size_t i = 0; i < spikes.size(); ++i) {
    const T h = v[i] + in[i];
    if (pre_reset) pre_reset[i] = h;
    const bool fire = h >= vth;
    spikes[i] = fire ? T(1) : T(0);
    v[i] = fire ? vr : h;
  }
  return spikes;
}

/// Multi-step IF layer over currents [T, ...] -> spikes [T, ...].
///
/// Backward: with H_t the pre-reset membrane and S_t the spike,
///   dL/dH_t = dL/dS_t * g'(H_t - v_th) + dL/dV_t * (1 - S_t)
/// where the reset path is detached, and dL/dV_{t-1} = dL/dI_t = dL/dH_t.
template <typename T>
Var<T> if_neuron(const Var<T>& currents, const IFConfig& cfg, std::string_view layer = "if_node") {
  cfg.validate();
  const Shape& cs = currents.shape();
  if (cs.size() < 2) throw ShapeError(std::string(layer) + ": currents must be [T, ...], got " + to_string(cs));
  const std::size_t steps = cs[0];
  const Shape step_shape(cs.begin() + 1, cs.end());
  const std::size_t n = numel(step_shape);

  auto state = IFState<T>::reset(step_shape, cfg);
  Tensor<T> spikes(cs);
  Tensor<T> pre_reset(cs);
  Tensor<T> current(step_shape);
  for (std::size_t t = 0; t < steps; ++t) {
    std::copy_n(currents.value().ptr() + t * n, n, current.ptr());
    Tensor<T> s = if_step(state, current, cfg, pre_reset.ptr() + t * n);
    std::copy_n(s.ptr(), n, spikes.ptr() + t * n);
  }

  const T vth = static_cast<T>(cfg.v_threshold), alpha = static_cast<T>(cfg.surrogate_alpha);
  return make_result<T>(std::string(layer), std::move(spikes), {currents},
                        [pre = std::move(pre_reset), steps, n, vth, alpha](Node<T>& self) {
                          auto& gi = self.parents[0]->grad_buffer();
                          std::vector<T> gv(n, T(0));
                          for (std::size_t t = steps; t-- > 0;) {
                            const T* h = pre.ptr() + t * n;
                            const T* s = self.value.ptr() + t * n;
                            const T* gs = self.grad.ptr() + t * n;
                            T* out = gi.ptr() + t * n;
                            for (std::size_t i = 0; i < n; ++i) {
                              const T gh = gs[i] * surrogate_grad(h[i] - vth, alpha) + gv[i] * (T(1) - s[i]);
                              out[i] += gh;
                              gv[i] = gh;
                            }
                          }
                        });
}

/// Direct coding: the analog image repeated at every time step.
template <typename T>
Var<T> encode_direct(const Var<T>& image, std::size_t steps) {
  if (steps < 1) throw Error("encode_direct: T must be >= 1");
  return repeat_leading(image, steps);
}

/// Spike count over the leading time axis divided by T. Rejects non-binary input.
template <typename T>
Var<T> firing_rate(const Var<T>& spikes) {
  for (auto v : spikes.value().data()) {
    if (v != T(0) && v != T(1)) throw Error("firing_rate: input is not a binary spike tensor");
  }
  return mean_leading(spikes);
}

}  // namespace ssfc
