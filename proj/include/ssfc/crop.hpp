#pragma once

// Square crops around a target, resized to the network input sizes.

#include <array>
#include <cmath>

#include "ssfc/data_io.hpp"

namespace ssfc {

/// Template-crop side with context p = (w + h) / 4: sqrt((w + 2p)(h + 2p)).
inline double context_side(double w, double h) {
  const double p = (w + h) / 4.0;
  return std::sqrt((w + 2 * p) * (h + 2 * p));
}

inline double search_side(double template_side) {
  return template_side * static_cast<double>(kSearchSize) / kTemplateSize;
}

/// Axis-aligned square window of `side` image pixels centred at (cx, cy),
/// sampled onto an out x out grid.
struct CropGeometry {
  double cx = 0, cy = 0, side = 1;
  int out = kSearchSize;

  double scale() const { return out / side; }  // crop pixels per image pixel
  double origin_x() const { return cx - side / 2; }
  double origin_y() const { return cy - side / 2; }

  BBox image_to_crop(const BBox& b) const {
    const double s = scale();
    return {(b.x0 - origin_x()) * s, (b.y0 - origin_y()) * s, (b.x1 - origin_x()) * s, (b.y1 - origin_y()) * s};
  }

  BBox crop_to_image(const BBox& b) const {
    const double s = side / out;
    return {origin_x() + b.x0 * s, origin_y() + b.y0 * s, origin_x() + b.x1 * s, origin_y() + b.y1 * s};
  }
};

inline std::array<float, 3> channel_mean(const Image& frame) {
  const std::size_t plane = image_height(frame) * image_width(frame);
  std::array<float, 3> m{};
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += frame[c * plane + i];
    m[c] = static_cast<float>(s / plane);
  }
  return m;
}

/// Extracts the square window (pixels outside the frame take the per-channel
/// frame mean) and resamples it bilinearly to out x out, pixel centres at
/// i + 0.5.
inline Image crop_patch(const Image& frame, double cx, double cy, double side, int out) {
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw Error("crop_patch: non-finite centre");
  if (!(side > 0) || !std::isfinite(side)) throw Error("crop_patch: side must be positive");
  if (out <= 0) throw Error("crop_patch: output size must be positive");
  const long h = static_cast<long>(image_height(frame)), w = static_cast<long>(image_width(frame));
  const std::size_t plane = static_cast<std::size_t>(h * w);
  const auto mean = channel_mean(frame);
  const CropGeometry g{cx, cy, side, out};
  const double step = side / out;
  const std::size_t n = static_cast<std::size_t>(out);
  Image patch(Shape{3, n, n});

  auto sample = [&](std::size_t c, long y, long x) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return mean[c];
    return frame[c * plane + static_cast<std::size_t>(y * w + x)];
  };
  for (std::size_t oy = 0; oy < n; ++oy) {
    const double fy = g.origin_y() + (oy + 0.5) * step - 0.5;
    const long y0 = static_cast<long>(std::floor(fy));
    const double wy = fy - y0;
    for (std::size_t ox = 0; ox < n; ++ox) {
      const double fx = g.origin_x() + (ox + 0.5) * step - 0.5;
      const long x0 = static_cast<long>(std::floor(fx));
      const double wx = fx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = sample(c, y0, x0), b = sample(c, y0, x0 + 1);
        const double d = sample(c, y0 + 1, x0), e = sample(c, y0 + 1, x0 + 1);
        const double top = a + (b - a) * wx, bot = d + (e - d) * wx;
        patch[(c * n + oy) * n + ox] = static_cast<float>(top + (bot - top) * wy);
      }
    }
  }
  return patch;
}

}  // namespace ssfc
