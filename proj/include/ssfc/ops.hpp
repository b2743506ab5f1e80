#pragma once

// Elementwise, reduction and layout ops over Var. Binary ops require equal
// shapes; there is no general broadcasting.

#include <cmath>
#include <string>
#include <utility>

#include "ssfc/autograd.hpp"

namespace ssfc {

namespace detail {

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// f(x) forward, df(x, y) derivative given input and output.
template <typename T, typename F, typename DF>
Var<T> unary(const char* op, const Var<T>& a, F f, DF df) {
  const auto& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result<T>(op, std::move(y), {a}, [df](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    const auto& x = pa.value;
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_result<T>("add", std::move(y), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return make_result<T>("sub", std::move(y), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return make_result<T>("mul", std::move(y), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("div", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return make_result<T>("div", std::move(y), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

/// Elementwise minimum; on ties the gradient goes to `a`.
template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape("minimum", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(y[i], b.value()[i]);
  return make_result<T>("minimum", std::move(y), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool take_a = pa.value[i] <= pb.value[i];
      if (take_a && pa.requires_grad) pa.grad_buffer()[i] += self.grad[i];
      if (!take_a && pb.requires_grad) pb.grad_buffer()[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return detail::unary<T>("scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

/// c - a
template <typename T>
Var<T> rsub_scalar(T c, const Var<T>& a) {
  return detail::unary<T>("rsub_scalar", a, [c](T x) { return c - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
  return detail::unary<T>(
      "pow", a, [p](T x) { return p == T(0) ? T(1) : std::pow(x, p); },
      [p](T x, T) { return p == T(0) ? T(0) : p * std::pow(x, p - T(1)); });
}

/// Clamp into [lo, hi]; gradient passes only where lo <= x <= hi.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (auto v : a.value().data()) s += v;
  return make_result<T>("sum", Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> y = a.value().reshaped(std::move(shape));
  return make_result<T>("reshape", std::move(y), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Contiguous range [start, start+len) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& in = a.shape();
  if (axis >= in.size() || len == 0 || start + len > in[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) + ") on axis " +
                     std::to_string(axis) + " of shape " + to_string(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape out_shape = in;
  out_shape[axis] = len;
  Tensor<T> y(out_shape);
  const std::size_t n_axis = in[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = a.value().ptr() + (o * n_axis + start) * inner;
    std::copy(src, src + len * inner, y.ptr() + o * len * inner);
  }
  return make_result<T>("slice", std::move(y), {a}, [outer, inner, n_axis, start, len](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = g.ptr() + (o * n_axis + start) * inner;
      const T* src = self.grad.ptr() + o * len * inner;
      for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
}

/// [d...] -> [steps, d...], each step a copy; the gradient sums over steps.
template <typename T>
Var<T> repeat_leading(const Var<T>& a, std::size_t steps) {
  if (steps < 1) throw ShapeError("repeat_leading: steps must be >= 1");
  Shape out_shape{steps};
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  Tensor<T> y(out_shape);
  const std::size_t n = a.size();
  for (std::size_t t = 0; t < steps; ++t) std::copy(a.value().ptr(), a.value().ptr() + n, y.ptr() + t * n);
  return make_result<T>("repeat", std::move(y), {a}, [steps, n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t t = 0; t < steps; ++t) {
      const T* src = self.grad.ptr() + t * n;
      for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
    }
  });
}

/// [steps, d...] -> [d...], arithmetic mean over the leading axis.
template <typename T>
Var<T> mean_leading(const Var<T>& a) {
  if (a.shape().size() < 2) throw ShapeError("mean_leading: need rank >= 2, got " + to_string(a.shape()));
  const std::size_t steps = a.shape()[0];
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t n = numel(out_shape);
  Tensor<T> y(out_shape);
  for (std::size_t t = 0; t < steps; ++t) {
    const T* src = a.value().ptr() + t * n;
    for (std::size_t i = 0; i < n; ++i) y[i] += src[i];
  }
  const T inv = T(1) / static_cast<T>(steps);
  for (auto& v : y.data()) v /= static_cast<T>(steps);
  return make_result<T>("mean_leading", std::move(y), {a}, [steps, n, inv](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t t = 0; t < steps; ++t) {
      T* dst = g.ptr() + t * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] += self.grad[i] * inv;
    }
  });
}

/// Stops gradient flow; the result is a constant with the same value.
template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::constant(a.value());
}

}  // namespace ssfc
