#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "ssfc/tensor.hpp"

namespace ssfc {

inline constexpr int kTemplateSize = 127;
inline constexpr int kSearchSize = 303;
inline constexpr int kScoreSize = 17;
inline constexpr int kTotalStride = 8;

/// Crop coordinate of the grid frame's origin. Score cell k has its receptive
/// field centred on crop pixel (303-1)/2 - 8*(17-1)/2 + 8k = 87 + 8k, i.e.
/// continuous coordinate 87.5 + 8k = kScoreOrigin + (floor(8/2) + 8k).
inline constexpr double kScoreOrigin =
    (kSearchSize - 1) / 2.0 - kTotalStride * (kScoreSize - 1) / 2.0 + 0.5 - kTotalStride / 2;

/// Axis-aligned box (x0, y0) top-left, (x1, y1) bottom-right, in pixels.
struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  static BBox from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }
  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return (x0 + x1) / 2; }
  double cy() const { return (y0 + y1) / 2; }
  bool valid() const { return x1 >= x0 && y1 >= y0; }
  bool finite() const { return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Distances from a grid point to the left, top, right and bottom box sides.
struct OffsetVector {
  double l = 0, t = 0, r = 0, b = 0;
  bool positive() const { return l > 0 && t > 0 && r > 0 && b > 0; }
};

struct GridPoint {
  double x = 0, y = 0;
};

/// Maps score-map cell (x, y) to (floor(s/2) + x*s, floor(s/2) + y*s).
inline GridPoint grid_to_image(int x, int y, int s, int grid = kScoreSize) {
  if (s <= 0) throw Error("grid_to_image: stride must be positive");
  if (x < 0 || y < 0 || x >= grid || y >= grid) {
    throw Error("grid_to_image: cell (" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  return {static_cast<double>(s / 2 + x * s), static_cast<double>(s / 2 + y * s)};
}

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Prior spatial score: sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)).
inline double pss(const OffsetVector& d) {
  if (!d.positive()) throw Error("pss: offsets must all be positive");
  return std::sqrt(std::min(d.l, d.r) / std::max(d.l, d.r) * std::min(d.t, d.b) / std::max(d.t, d.b));
}

inline OffsetVector encode_box(const BBox& box, double px, double py) {
  return {px - box.x0, py - box.y0, box.x1 - px, box.y1 - py};
}

inline BBox decode_box(const OffsetVector& d, double px, double py) {
  return {px - d.l, py - d.t, px + d.r, py + d.b};
}

/// Positive offsets s * exp(raw) from the four raw regression outputs.
inline OffsetVector decode_offsets(double raw_l, double raw_t, double raw_r, double raw_b, int s) {
  return {s * std::exp(raw_l), s * std::exp(raw_t), s * std::exp(raw_r), s * std::exp(raw_b)};
}

inline double center_distance(const BBox& a, const BBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

}  // namespace ssfc
