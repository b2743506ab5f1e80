#pragma once

// Siamese head: depthwise correlation of template and search rates, cls and
// reg towers (three valid 3x3 convs each, 23 -> 17), and 1x1 projections to
// the cls, quality and reg maps. Also label assignment on the score grid.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "ssfc/backbone.hpp"
#include "ssfc/boxes.hpp"

namespace ssfc {

enum class QualityKind { kPSS, kIoU };

inline std::string to_string(QualityKind k) { return k == QualityKind::kPSS ? "pss" : "iou"; }

inline QualityKind parse_quality_kind(const std::string& s) {
  if (s == "pss" || s == "PSS") return QualityKind::kPSS;
  if (s == "iou" || s == "IoU" || s == "IOU") return QualityKind::kIoU;
  throw Error("unknown quality kind '" + s + "' (expected pss or iou)");
}

struct HeadArch {
  static constexpr std::size_t kInChannels = BackboneArch::kOutChannels;
  static constexpr std::size_t kTowerChannels = 256;
  static constexpr std::size_t kTowerDepth = 3;
  static constexpr std::size_t kCorrSize = 23;

  static ConvSpec tower_spec(std::size_t i) {
    return {i == 0 ? kInChannels : kTowerChannels, kTowerChannels, 3, 3, 1, 0, 1};
  }
  static ConvSpec proj_spec(std::size_t out) { return {kTowerChannels, out, 1, 1, 1, 0, 1}; }
};

template <typename T>
struct HeadParams {
  std::array<ConvParams<T>, HeadArch::kTowerDepth> cls_tower;
  std::array<ConvParams<T>, HeadArch::kTowerDepth> reg_tower;
  ConvParams<T> proj_cls;
  ConvParams<T> proj_quality;
  ConvParams<T> proj_reg;

  static HeadParams init(std::mt19937_64& rng) {
    HeadParams h;
    for (std::size_t i = 0; i < HeadArch::kTowerDepth; ++i) {
      h.cls_tower[i] = make_conv<T>("tower.cls.conv" + std::to_string(i + 1), HeadArch::tower_spec(i), rng);
    }
    for (std::size_t i = 0; i < HeadArch::kTowerDepth; ++i) {
      h.reg_tower[i] = make_conv<T>("tower.reg.conv" + std::to_string(i + 1), HeadArch::tower_spec(i), rng);
    }
    h.proj_cls = make_conv<T>("proj.cls", HeadArch::proj_spec(1), rng);
    h.proj_quality = make_conv<T>("proj.quality", HeadArch::proj_spec(1), rng);
    h.proj_reg = make_conv<T>("proj.reg", HeadArch::proj_spec(4), rng);
    return h;
  }

  std::vector<ConvParams<T>*> convs() {
    std::vector<ConvParams<T>*> out;
    for (auto& c : cls_tower) out.push_back(&c);
    for (auto& c : reg_tower) out.push_back(&c);
    out.push_back(&proj_cls);
    out.push_back(&proj_quality);
    out.push_back(&proj_reg);
    return out;
  }

  std::vector<Var<T>> parameters() {
    std::vector<Var<T>> out;
    for (auto* c : convs()) {
      out.push_back(c->weight);
      out.push_back(c->bias);
    }
    return out;
  }
};

/// Output-layer biases set from priors instead of the uniform init: cls starts
/// at probability `cls_prior`, reg starts at offsets of `reg_offset` pixels.
template <typename T>
void set_output_priors(HeadParams<T>& h, double cls_prior, double reg_offset, int stride = kTotalStride) {
  if (!(cls_prior > 0 && cls_prior < 1) || !(reg_offset > 0)) throw Error("set_output_priors: invalid prior");
  h.proj_cls.bias.mutable_value().fill(static_cast<T>(-std::log((1 - cls_prior) / cls_prior)));
  h.proj_reg.bias.mutable_value().fill(static_cast<T>(std::log(reg_offset / stride)));
}

/// Per-frame head outputs; shapes [B, 1, 17, 17] (cls, quality) and [B, 4, 17, 17] (reg).
template <typename T>
struct HeadMaps {
  Var<T> cls_logits;
  Var<T> cls;  // sigmoid(cls_logits)
  Var<T> quality_logits;
  Var<T> quality;  // sigmoid(quality_logits)
  Var<T> reg;      // raw; offsets are stride * exp(reg)
};

template <typename T>
Var<T> cross_correlate(const FeatureMap<T>& z, const FeatureMap<T>& x) {
  if (z.rates.shape().size() != x.rates.shape().size() || z.rates.shape().size() < 3 ||
      z.rates.shape()[z.rates.shape().size() - 3] != x.rates.shape()[x.rates.shape().size() - 3]) {
    throw ShapeError("cross_correlate: channel mismatch " + to_string(z.rates.shape()) + " vs " +
                     to_string(x.rates.shape()));
  }
  return xcorr_depthwise(z.rates, x.rates);
}

template <typename T>
HeadMaps<T> head_forward(const Var<T>& corr, const HeadParams<T>& p) {
  const Shape& s = corr.shape();
  if (s.size() != 4 || s[1] != HeadArch::kInChannels || s[2] != HeadArch::kCorrSize || s[3] != HeadArch::kCorrSize) {
    throw ShapeError("head_forward: expected correlation [B, 256, 23, 23], got " + to_string(s));
  }
  auto tower = [&](const std::array<ConvParams<T>, HeadArch::kTowerDepth>& convs) {
    Var<T> h = corr;
    for (const auto& c : convs) h = relu(conv2d(h, c.weight, c.bias, c.spec, c.name));
    return h;
  };
  const Var<T> cls_feat = tower(p.cls_tower);
  const Var<T> reg_feat = tower(p.reg_tower);
  HeadMaps<T> m;
  m.cls_logits = conv2d(cls_feat, p.proj_cls.weight, p.proj_cls.bias, p.proj_cls.spec, p.proj_cls.name);
  m.cls = sigmoid(m.cls_logits);
  m.quality_logits =
      conv2d(cls_feat, p.proj_quality.weight, p.proj_quality.bias, p.proj_quality.spec, p.proj_quality.name);
  m.quality = sigmoid(m.quality_logits);
  m.reg = conv2d(reg_feat, p.proj_reg.weight, p.proj_reg.bias, p.proj_reg.spec, p.proj_reg.name);
  return m;
}

/// Training targets on the score grid for one sample.
struct LabelSet {
  Tensor<double> c_star{Shape{kScoreSize, kScoreSize}};     // 1 = positive
  Tensor<double> d_star{Shape{4, kScoreSize, kScoreSize}};  // l, t, r, b; valid where c_star = 1
  Tensor<double> q_star{Shape{kScoreSize, kScoreSize}};     // quality target; valid where c_star = 1
  QualityKind quality_kind = QualityKind::kPSS;
  BBox gt;  // in grid-frame coordinates

  std::size_t positives() const {
    std::size_t n = 0;
    for (auto v : c_star.data()) n += v > 0.5 ? 1 : 0;
    return n;
  }
};

/// gt in grid-frame coordinates (crop coordinates minus kScoreOrigin). A cell
/// is positive iff its mapped point lies strictly inside gt.
///
/// In IoU mode q_star starts at 1 (the target box decoded from d_star is gt
/// itself); training overwrites it from the current reg predictions.
inline LabelSet assign_labels(const BBox& gt, int s, int grid, QualityKind kind) {
  if (!gt.finite() || !gt.valid() || gt.area() <= 0) throw Error("assign_labels: ground-truth box has zero area");
  if (grid != kScoreSize) throw Error("assign_labels: grid must be " + std::to_string(kScoreSize));
  LabelSet labels;
  labels.quality_kind = kind;
  labels.gt = gt;
  const std::size_t cells = static_cast<std::size_t>(grid) * grid;
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      const auto [px, py] = grid_to_image(x, y, s, grid);
      const std::size_t i = static_cast<std::size_t>(y) * grid + x;
      const bool inside = px > gt.x0 && px < gt.x1 && py > gt.y0 && py < gt.y1;
      if (!inside) {
        for (std::size_t c = 0; c < 4; ++c) labels.d_star[c * cells + i] = 1.0;
        continue;
      }
      const OffsetVector d = encode_box(gt, px, py);
      labels.c_star[i] = 1.0;
      labels.d_star[0 * cells + i] = d.l;
      labels.d_star[1 * cells + i] = d.t;
      labels.d_star[2 * cells + i] = d.r;
      labels.d_star[3 * cells + i] = d.b;
      labels.q_star[i] = kind == QualityKind::kPSS ? pss(d) : 1.0;
    }
  }
  return labels;
}

/// Crop-coordinate box -> grid-frame box.
inline BBox crop_to_grid(const BBox& b) {
  return {b.x0 - kScoreOrigin, b.y0 - kScoreOrigin, b.x1 - kScoreOrigin, b.y1 - kScoreOrigin};
}

inline BBox grid_to_crop(const BBox& b) {
  return {b.x0 + kScoreOrigin, b.y0 + kScoreOrigin, b.x1 + kScoreOrigin, b.y1 + kScoreOrigin};
}

}  // namespace ssfc
