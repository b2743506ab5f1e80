#pragma once

// Grouped 2-D convolution (unflipped cross-correlation), max pooling and
// depthwise template correlation. Inputs are [..., C, H, W]; every leading
// axis is treated as batch, so [T, B, C, H, W] spike tensors go straight in.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ssfc/autograd.hpp"

namespace ssfc {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 || groups == 0) {
      throw ShapeError("ConvSpec: channels, kernel, stride and groups must be positive");
    }
    if (in_channels % groups || out_channels % groups) {
      throw ShapeError("ConvSpec: channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                       " not divisible by groups " + std::to_string(groups));
    }
  }

  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {out_channels}; }

  std::size_t parameter_count() const {
    return (in_channels / groups) * out_channels * kernel_h * kernel_w + out_channels;
  }

  /// Output extent along one axis; throws when the kernel does not fit.
  std::size_t output_extent(std::size_t in, std::size_t kernel) const {
    if (in + 2 * padding < kernel) throw ShapeError("kernel larger than padded input");
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, oh, ow, kh, kw, stride, pad, groups;
  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t k() const { return cin_g() * kh * kw; }
  std::size_t p() const { return oh * ow; }
};

// Writes the group's patch matrix for one image into cols (row stride ld,
// starting at column col0).
template <typename T>
void im2col(const T* img, const ConvGeometry& g, std::size_t group, T* cols, std::size_t ld, std::size_t col0) {
  const std::size_t cg = g.cin_g();
  for (std::size_t c = 0; c < cg; ++c) {
    const T* plane = img + (group * cg + c) * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = cols + ((c * g.kh + ki) * g.kw + kj) * ld + col0;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          T* row = dst + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(row, row + g.ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          if (g.pad == 0 && g.stride == 1) {
            std::copy(src + kj, src + kj + g.ow, row);
            continue;
          }
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, std::size_t group, T* img, std::size_t ld, std::size_t col0) {
  const std::size_t cg = g.cin_g();
  for (std::size_t c = 0; c < cg; ++c) {
    T* plane = img + (group * cg + c) * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src_row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + col0;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = plane + iy * g.w;
          const T* row = src_row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

// Images per GEMM so that small late layers still get wide matrices.
inline std::size_t images_per_chunk(const ConvGeometry& g) {
  constexpr std::size_t kTargetCols = 4096;
  return std::clamp<std::size_t>(kTargetCols / std::max<std::size_t>(g.p(), 1), 1, g.batch);
}

}  // namespace detail

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec,
              std::string_view layer = "conv2d") {
  using detail::RowMat;
  spec.validate();
  const Shape& in = input.shape();
  const std::string name(layer);
  if (in.size() < 4) throw ShapeError(name + ": input must be [..., C, H, W], got " + to_string(in));
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError(name + ": weight shape " + to_string(weight.shape()) + " does not match expected " +
                     to_string(spec.weight_shape()));
  }
  if (bias.shape() != spec.bias_shape()) {
    throw ShapeError(name + ": bias shape " + to_string(bias.shape()) + " does not match expected " +
                     to_string(spec.bias_shape()));
  }
  const std::size_t r = in.size();
  if (in[r - 3] != spec.in_channels) {
    throw ShapeError(name + ": input shape " + to_string(in) + " does not match weight shape " +
                     to_string(weight.shape()) + " (expected " + std::to_string(spec.in_channels) + " channels)");
  }

  detail::ConvGeometry g{};
  g.batch = numel(Shape(in.begin(), in.end() - 3));
  g.cin = spec.in_channels;
  g.h = in[r - 2];
  g.w = in[r - 1];
  g.cout = spec.out_channels;
  g.kh = spec.kernel_h;
  g.kw = spec.kernel_w;
  g.stride = spec.stride;
  g.pad = spec.padding;
  g.groups = spec.groups;
  g.oh = spec.output_extent(g.h, g.kh);
  g.ow = spec.output_extent(g.w, g.kw);

  Shape out_shape(in.begin(), in.end() - 3);
  out_shape.insert(out_shape.end(), {g.cout, g.oh, g.ow});
  Tensor<T> out(out_shape);

  const std::size_t K = g.k(), P = g.p(), cg_out = g.cout_g();
  const std::size_t chunk = detail::images_per_chunk(g);
  const T* x = input.value().ptr();
  const T* wptr = weight.value().ptr();
  const T* bptr = bias.value().ptr();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * P;

  std::vector<T> cols(K * chunk * P);
  RowMat<T> staged;
  for (std::size_t n0 = 0; n0 < g.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, g.batch - n0), ld = nb * P;
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      for (std::size_t i = 0; i < nb; ++i) detail::im2col(x + (n0 + i) * in_img, g, grp, cols.data(), ld, i * P);
      Eigen::Map<const RowMat<T>> W(wptr + grp * cg_out * K, cg_out, K);
      Eigen::Map<const RowMat<T>> C(cols.data(), K, ld);
      if (nb == 1) {
        Eigen::Map<RowMat<T>> Y(out.ptr() + n0 * out_img + grp * cg_out * P, cg_out, P);
        Y.noalias() = W * C;
      } else {
        staged.resize(cg_out, ld);
        staged.noalias() = W * C;
        for (std::size_t i = 0; i < nb; ++i) {
          for (std::size_t co = 0; co < cg_out; ++co) {
            std::copy_n(staged.data() + co * ld + i * P, P, out.ptr() + (n0 + i) * out_img + (grp * cg_out + co) * P);
          }
        }
      }
    }
  }
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* y = out.ptr() + n * out_img + co * P;
      const T b = bptr[co];
      for (std::size_t i = 0; i < P; ++i) y[i] += b;
    }
  }

  return make_result<T>(name, std::move(out), {input, weight, bias}, [g, chunk](Node<T>& self) {
    auto& pin = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    const std::size_t K = g.k(), P = g.p(), cg_out = g.cout_g();
    const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * P;
    const T* gy = self.grad.ptr();

    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const T* row = gy + n * out_img + co * P;
          T s = 0;
          for (std::size_t i = 0; i < P; ++i) s += row[i];
          gb[co] += s;
        }
      }
    }
    if (!pw.requires_grad && !pin.requires_grad) return;

    T* gw = pw.requires_grad ? pw.grad_buffer().ptr() : nullptr;
    T* gx = pin.requires_grad ? pin.grad_buffer().ptr() : nullptr;
    const T* x = pin.value.ptr();
    const T* wptr = pw.value.ptr();
    std::vector<T> cols(K * chunk * P);
    RowMat<T> dy_staged;
    for (std::size_t n0 = 0; n0 < g.batch; n0 += chunk) {
      const std::size_t nb = std::min(chunk, g.batch - n0), ld = nb * P;
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* dy_ptr;
        if (nb == 1) {
          dy_ptr = gy + n0 * out_img + grp * cg_out * P;
        } else {
          dy_staged.resize(cg_out, ld);
          for (std::size_t i = 0; i < nb; ++i) {
            for (std::size_t co = 0; co < cg_out; ++co) {
              std::copy_n(gy + (n0 + i) * out_img + (grp * cg_out + co) * P, P, dy_staged.data() + co * ld + i * P);
            }
          }
          dy_ptr = dy_staged.data();
        }
        Eigen::Map<const RowMat<T>> dY(dy_ptr, cg_out, ld);
        if (gw) {
          for (std::size_t i = 0; i < nb; ++i) detail::im2col(x + (n0 + i) * in_img, g, grp, cols.data(), ld, i * P);
          Eigen::Map<const RowMat<T>> C(cols.data(), K, ld);
          Eigen::Map<RowMat<T>> dW(gw + grp * cg_out * K, cg_out, K);
          dW.noalias() += dY * C.transpose();
        }
        if (gx) {
          Eigen::Map<const RowMat<T>> W(wptr + grp * cg_out * K, cg_out, K);
          Eigen::Map<RowMat<T>> dC(cols.data(), K, ld);
          dC.noalias() = W.transpose() * dY;
          for (std::size_t i = 0; i < nb; ++i) detail::col2im(cols.data(), g, grp, gx + (n0 + i) * in_img, ld, i * P);
        }
      }
    }
  });
}

/// Max pooling without padding. The backward pass routes each output gradient
/// to the first maximal input in row-major scan order.
template <typename T>
Var<T> maxpool2d(const Var<T>& input, std::size_t k, std::size_t s, std::string_view layer = "maxpool2d") {
  const Shape& in = input.shape();
  const std::string name(layer);
  if (in.size() < 3) throw ShapeError(name + ": input must be [..., H, W], got " + to_string(in));
  if (k == 0 || s == 0) throw ShapeError(name + ": kernel and stride must be positive");
  const std::size_t r = in.size(), h = in[r - 2], w = in[r - 1];
  if (k > h || k > w) {
    throw ShapeError(name + ": kernel " + std::to_string(k) + " larger than input " + to_string(in));
  }
  const std::size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  const std::size_t planes = numel(Shape(in.begin(), in.end() - 2));
  Shape out_shape(in.begin(), in.end() - 2);
  out_shape.insert(out_shape.end(), {oh, ow});
  Tensor<T> out(out_shape);
  std::vector<std::uint32_t> argmax(out.size());
  const T* x = input.value().ptr();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = x + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * s) * w + ox * s;
        T best_v = plane[best];
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t base = (oy * s + i) * w + ox * s;
          for (std::size_t j = 0; j < k; ++j) {
            if (plane[base + j] > best_v) {
              best_v = plane[base + j];
              best = base + j;
            }
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = best_v;
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const std::size_t per_plane = oh * ow, in_plane = h * w;
  return make_result<T>(name, std::move(out), {input},
                        [argmax = std::move(argmax), per_plane, in_plane](Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          for (std::size_t o = 0; o < argmax.size(); ++o) {
                            gx[(o / per_plane) * in_plane + argmax[o]] += self.grad[o];
                          }
                        });
}

/// Depthwise correlation: each template channel slides (stride 1, no padding)
/// over the matching search channel. z [..., C, hz, wz], x [..., C, hx, wx]
/// with identical leading axes -> [..., C, hx-hz+1, wx-wz+1].
template <typename T>
Var<T> xcorr_depthwise(const Var<T>& z, const Var<T>& x) {
  const Shape& zs = z.shape();
  const Shape& xs = x.shape();
  if (zs.size() < 3 || zs.size() != xs.size() || !std::equal(zs.begin(), zs.end() - 2, xs.begin())) {
    throw ShapeError("xcorr_depthwise: channel/batch mismatch between template " + to_string(zs) + " and search " +
                     to_string(xs));
  }
  const std::size_t r = zs.size();
  const std::size_t hz = zs[r - 2], wz = zs[r - 1], hx = xs[r - 2], wx = xs[r - 1];
  if (hz > hx || wz > wx) {
    throw ShapeError("xcorr_depthwise: template " + to_string(zs) + " larger than search " + to_string(xs));
  }
  const std::size_t oh = hx - hz + 1, ow = wx - wz + 1;
  const std::size_t planes = numel(Shape(zs.begin(), zs.end() - 2));
  Shape out_shape(zs.begin(), zs.end() - 2);
  out_shape.insert(out_shape.end(), {oh, ow});
  Tensor<T> out(out_shape);
  const T* zp = z.value().ptr();
  const T* xp = x.value().ptr();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* zc = zp + p * hz * wz;
    const T* xc = xp + p * hx * wx;
    T* oc = out.ptr() + p * oh * ow;
    for (std::size_t u = 0; u < hz; ++u) {
      for (std::size_t v = 0; v < wz; ++v) {
        const T zv = zc[u * wz + v];
        for (std::size_t i = 0; i < oh; ++i) {
          const T* xr = xc + (i + u) * wx + v;
          T* orow = oc + i * ow;
          for (std::size_t j = 0; j < ow; ++j) orow[j] += zv * xr[j];
        }
      }
    }
  }
  return make_result<T>("xcorr_depthwise", std::move(out), {z, x},
                        [planes, hz, wz, hx, wx, oh, ow](Node<T>& self) {
                          auto& pz = *self.parents[0];
                          auto& px = *self.parents[1];
                          T* gz = pz.requires_grad ? pz.grad_buffer().ptr() : nullptr;
                          T* gx = px.requires_grad ? px.grad_buffer().ptr() : nullptr;
                          for (std::size_t p = 0; p < planes; ++p) {
                            const T* go = self.grad.ptr() + p * oh * ow;
                            const T* zc = pz.value.ptr() + p * hz * wz;
                            const T* xc = px.value.ptr() + p * hx * wx;
                            for (std::size_t u = 0; u < hz; ++u) {
                              for (std::size_t v = 0; v < wz; ++v) {
                                T acc = 0;
                                const T zv = zc[u * wz + v];
                                for (std::size_t i = 0; i < oh; ++i) {
                                  const T* xr = xc + (i + u) * wx + v;
                                  const T* grow = go + i * ow;
                                  if (gx) {
                                    T* gxr = gx + p * hx * wx + (i + u) * wx + v;
                                    for (std::size_t j = 0; j < ow; ++j) gxr[j] += grow[j] * zv;
                                  }
                                  for (std::size_t j = 0; j < ow; ++j) acc += grow[j] * xr[j];
                                }
                                if (gz) gz[p * hz * wz + u * wz + v] += acc;
                              }
                            }
                          }
                        });
}

}  // namespace ssfc
