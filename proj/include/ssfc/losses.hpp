#pragma once

// Focal classification loss, BCE quality loss and IoU regression loss, plus
// their combination normalised by the number of positive cells.

#include <cmath>
#include <vector>

#include "ssfc/head.hpp"

namespace ssfc {

inline constexpr double kProbEpsilon = 1e-7;

enum class RegLossForm { kOneMinusIoU, kNegLogIoU };

struct LossConfig {
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  RegLossForm reg_form = RegLossForm::kOneMinusIoU;
  int stride = kTotalStride;
};

namespace detail {
inline double clamp_prob(double p, const char* what) {
  if (std::isnan(p)) throw NumericError(std::string(what) + ": probability is NaN");
  p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  if (!(p > 0.0 && p < 1.0)) throw Error(std::string(what) + ": probability outside (0, 1)");
  return p;
}
}  // namespace detail

inline double focal_loss(double p, int c_star, double gamma, double alpha) {
  p = detail::clamp_prob(p, "focal_loss");
  if (c_star == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

inline double quality_loss(double q, double q_star) {
  q = detail::clamp_prob(q, "quality_loss");
  return -q_star * std::log(q) - (1.0 - q_star) * std::log(1.0 - q);
}

inline double reg_loss(const BBox& pred, const BBox& gt, RegLossForm form = RegLossForm::kOneMinusIoU) {
  const double v = iou(pred, gt);
  if (form == RegLossForm::kOneMinusIoU) return 1.0 - v;
  return -std::log(std::max(v, kProbEpsilon));
}

template <typename T>
struct LossResult {
  Var<T> total;              // normalised by the N_pos passed in (or counted)
  double cls_sum = 0;        // unnormalised sums, for logging
  double quality_sum = 0;
  double reg_sum = 0;
  double iou_sum = 0;        // IoU of predicted vs target boxes over positives
  std::size_t positives = 0; // positives in these labels
};

/// Per-location IoU between the box decoded from `offsets` and the target
/// offsets, both anchored at the same grid point:
///   inter = (min(l,l*) + min(r,r*)) * (min(t,t*) + min(b,b*)).
template <typename T>
Var<T> offset_iou(const std::array<Var<T>, 4>& pred, const std::array<Var<T>, 4>& target) {
  const Var<T> pred_area = mul(add(pred[0], pred[2]), add(pred[1], pred[3]));
  const Var<T> gt_area = mul(add(target[0], target[2]), add(target[1], target[3]));
  const Var<T> iw = add(minimum(pred[0], target[0]), minimum(pred[2], target[2]));
  const Var<T> ih = add(minimum(pred[1], target[1]), minimum(pred[3], target[3]));
  const Var<T> inter = mul(iw, ih);
  return div(inter, sub(add(pred_area, gt_area), inter));
}

/// Combined loss over a batch of head maps [B, ...] and B label sets:
///   L = (sum_all L_cls + sum_pos L_quality + sum_pos L_reg) / N_pos.
/// `n_pos_norm` > 0 overrides N_pos, so a batch split into several graphs
/// can share one normaliser.
template <typename T>
LossResult<T> total_loss(const HeadMaps<T>& maps, const std::vector<LabelSet>& labels, const LossConfig& cfg,
                         std::size_t n_pos_norm = 0) {
  const Shape& cs = maps.cls.shape();
  const std::size_t batch = cs.at(0);
  if (labels.size() != batch) {
    throw ShapeError("total_loss: " + std::to_string(labels.size()) + " label sets for batch of " +
                     std::to_string(batch));
  }
  const std::size_t cells = kScoreSize * kScoreSize;
  const Shape map1{batch, 1, kScoreSize, kScoreSize};
  if (cs != map1 || maps.quality.shape() != map1 ||
      maps.reg.shape() != Shape{batch, 4, kScoreSize, kScoreSize}) {
    throw ShapeError("total_loss: unexpected head map shapes");
  }

  Tensor<T> c_star(map1), not_c(map1);
  std::array<Tensor<T>, 4> d_star{Tensor<T>(map1), Tensor<T>(map1), Tensor<T>(map1), Tensor<T>(map1)};
  std::size_t positives = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    positives += labels[b].positives();
    for (std::size_t i = 0; i < cells; ++i) {
      c_star[b * cells + i] = static_cast<T>(labels[b].c_star[i]);
      not_c[b * cells + i] = T(1) - c_star[b * cells + i];
      for (std::size_t k = 0; k < 4; ++k) d_star[k][b * cells + i] = static_cast<T>(labels[b].d_star[k * cells + i]);
    }
  }
  const std::size_t norm = n_pos_norm ? n_pos_norm : positives;
  if (norm == 0) throw Error("total_loss: no positive samples");

  const T eps = static_cast<T>(kProbEpsilon);
  const T one = T(1);
  const T gamma = static_cast<T>(cfg.focal_gamma), alpha = static_cast<T>(cfg.focal_alpha);
  const Var<T> C = Var<T>::constant(c_star);
  const Var<T> NC = Var<T>::constant(not_c);

  // Classification (all cells).
  const Var<T> p = clamp(maps.cls, eps, one - eps);
  const Var<T> pos_term = scale(mul(pow_scalar(rsub_scalar(one, p), gamma), log(p)), -alpha);
  const Var<T> neg_term = scale(mul(pow_scalar(p, gamma), log(rsub_scalar(one, p))), -(one - alpha));
  const Var<T> cls_sum = sum(add(mul(C, pos_term), mul(NC, neg_term)));

  // Regression (positives).
  const Var<T> offsets = scale(exp(maps.reg), static_cast<T>(cfg.stride));
  std::array<Var<T>, 4> pred, target;
  for (std::size_t k = 0; k < 4; ++k) {
    pred[k] = slice(offsets, 1, k, 1);
    target[k] = Var<T>::constant(d_star[k]);
  }
  const Var<T> ious = offset_iou(pred, target);
  const Var<T> reg_terms = cfg.reg_form == RegLossForm::kOneMinusIoU
                               ? rsub_scalar(one, ious)
                               : neg(log(clamp(ious, eps, one)));
  const Var<T> reg_sum = sum(mul(C, reg_terms));

  // Quality (positives); IoU targets come from the current predictions.
  Tensor<T> q_star(map1);
  double iou_sum = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < cells; ++i) {
      const std::size_t j = b * cells + i;
      if (c_star[j] == T(0)) continue;
      iou_sum += ious.value()[j];
      q_star[j] = labels[b].quality_kind == QualityKind::kIoU ? ious.value()[j]
                                                               : static_cast<T>(labels[b].q_star[i]);
    }
  }
  const Var<T> Q = Var<T>::constant(q_star);
  const Var<T> NQ = Var<T>::constant([&] {
    Tensor<T> t(map1);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = one - q_star[j];
    return t;
  }());
  const Var<T> q = clamp(maps.quality, eps, one - eps);
  const Var<T> bce = neg(add(mul(Q, log(q)), mul(NQ, log(rsub_scalar(one, q)))));
  const Var<T> quality_sum = sum(mul(C, bce));

  LossResult<T> r;
  r.total = scale(add(add(cls_sum, quality_sum), reg_sum), one / static_cast<T>(norm));
  r.cls_sum = cls_sum.value().item();
  r.quality_sum = quality_sum.value().item();
  r.reg_sum = reg_sum.value().item();
  r.iou_sum = iou_sum;
  r.positives = positives;
  return r;
}

}  // namespace ssfc
