#pragma once

// Online tracking: template features from frame 0, then per frame a search
// crop around the previous box, score map, argmax, box decode and update.

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "ssfc/crop.hpp"
#include "ssfc/model.hpp"

namespace ssfc {

struct TrackerConfig {
  double window_weight = 0.3;
  double size_lerp = 0.3;
  double min_size = 4;  // pixels; keeps the crop scale from collapsing

  void validate() const {
    if (!(window_weight >= 0 && window_weight <= 1)) throw Error("tracker: window_weight must be in [0, 1]");
    if (!(size_lerp >= 0 && size_lerp <= 1)) throw Error("tracker: size_lerp must be in [0, 1]");
    if (!(min_size > 0)) throw Error("tracker: min_size must be positive");
  }
};

/// Outer product of two n-point Hann vectors; peak 1 at the centre for odd n.
inline Tensor<double> hann_window(std::size_t n) {
  std::vector<double> h(n, 1.0);
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) h[i] = 0.5 - 0.5 * std::cos(2 * M_PI * static_cast<double>(i) / (n - 1));
  }
  Tensor<double> w(Shape{n, n});
  double peak = 0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) peak = std::max(peak, w[y * n + x] = h[y] * h[x]);
  for (auto& v : w.data()) v /= peak;
  return w;
}

template <typename T>
struct TrackerState {
  FeatureMap<T> template_feat;  // [1, 256, 6, 6]
  BBox box;                     // reported estimate, clipped to the frame
  double w = 0, h = 0;          // unclipped size, drives the crop scale
  double cx = 0, cy = 0;
  double template_side = 0;
  Tensor<double> window{Shape{kScoreSize, kScoreSize}};
  TrackerConfig cfg;
  std::size_t frame_w = 0, frame_h = 0;
  bool initialized = false;
};

struct TrackResult {
  BBox box;
  double score = 0;  // unwindowed cls * quality at the chosen cell
  int cell_x = 0, cell_y = 0;
};

/// Score maps of one update, exposed for inspection and tests.
struct ScoreMaps {
  Tensor<double> final_score{Shape{kScoreSize, kScoreSize}};
  Tensor<double> windowed{Shape{kScoreSize, kScoreSize}};
  Tensor<double> reg{Shape{4, kScoreSize, kScoreSize}};
};

/// final = cls * quality, windowed = (1 - w) final + w window, argmax with
/// the first row-major index winning ties.
template <typename T>
ScoreMaps score_maps(const HeadMaps<T>& maps, const Tensor<double>& window, double window_weight) {
  const std::size_t cells = kScoreSize * kScoreSize;
  ScoreMaps s;
  for (std::size_t i = 0; i < cells; ++i) {
    s.final_score[i] = static_cast<double>(maps.cls.value()[i]) * static_cast<double>(maps.quality.value()[i]);
    s.windowed[i] = (1 - window_weight) * s.final_score[i] + window_weight * window[i];
  }
  for (std::size_t i = 0; i < 4 * cells; ++i) s.reg[i] = static_cast<double>(maps.reg.value()[i]);
  return s;
}

inline std::size_t argmax_first(const Tensor<double>& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[best]) best = i;
  return best;
}

template <typename T>
class Tracker {
 public:
  Tracker(const SiameseModel<T>& model, TrackerConfig cfg) : model_(model) {
    cfg.validate();
    state_.cfg = cfg;
  }

  const TrackerState<T>& state() const { return state_; }

  void init(const Image& frame, const BBox& gt) {
    if (!gt.finite() || gt.width() <= 0 || gt.height() <= 0) throw Error("tracker init: gt box has zero area");
    NoGradGuard no_grad;
    state_.frame_h = image_height(frame);
    state_.frame_w = image_width(frame);
    state_.template_side = context_side(gt.width(), gt.height());
    const Image z = crop_patch(frame, gt.cx(), gt.cy(), state_.template_side, kTemplateSize);
    state_.template_feat =
        model_.features(Var<T>::constant(z.template cast<T>().reshaped({1, 3, kTemplateSize, kTemplateSize})));
    state_.window = hann_window(kScoreSize);
    state_.cx = gt.cx();
    state_.cy = gt.cy();
    state_.w = gt.width();
    state_.h = gt.height();
    state_.box = gt;
    state_.initialized = true;
  }

  TrackResult update(const Image& frame, ScoreMaps* out_maps = nullptr) {
    if (!state_.initialized) throw Error("tracker update: state not initialized");
    if (image_height(frame) != state_.frame_h || image_width(frame) != state_.frame_w) {
      throw DataError("tracker update: frame size differs from the init frame");
    }
    NoGradGuard no_grad;
    const double side = search_side(context_side(state_.w, state_.h));
    const CropGeometry geo{state_.cx, state_.cy, side, kSearchSize};
    const Image x = crop_patch(frame, geo.cx, geo.cy, geo.side, kSearchSize);
    const FeatureMap<T> xf =
        model_.features(Var<T>::constant(x.template cast<T>().reshaped({1, 3, kSearchSize, kSearchSize})));
    const HeadMaps<T> maps = model_.forward(state_.template_feat, xf);
    ScoreMaps s = score_maps(maps, state_.window, state_.cfg.window_weight);

    const std::size_t best = argmax_first(s.windowed);
    const int ax = static_cast<int>(best % kScoreSize), ay = static_cast<int>(best / kScoreSize);
    const std::size_t cells = kScoreSize * kScoreSize;
    const auto p = grid_to_image(ax, ay, kTotalStride, kScoreSize);
    const OffsetVector d = decode_offsets(s.reg[0 * cells + best], s.reg[1 * cells + best], s.reg[2 * cells + best],
                                          s.reg[3 * cells + best], kTotalStride);
    const BBox in_crop = decode_box(d, p.x + kScoreOrigin, p.y + kScoreOrigin);
    const BBox in_image = geo.crop_to_image(in_crop);

    const double lr = state_.cfg.size_lerp;
    const double fw = static_cast<double>(state_.frame_w), fh = static_cast<double>(state_.frame_h);
    state_.cx = std::clamp(in_image.cx(), 0.0, fw);
    state_.cy = std::clamp(in_image.cy(), 0.0, fh);
    state_.w = std::clamp(state_.w + (in_image.width() - state_.w) * lr, state_.cfg.min_size, std::max(fw, state_.cfg.min_size));
    state_.h = std::clamp(state_.h + (in_image.height() - state_.h) * lr, state_.cfg.min_size, std::max(fh, state_.cfg.min_size));
    state_.box = clip_box(BBox::from_center(state_.cx, state_.cy, state_.w, state_.h), fw, fh);

    TrackResult r{state_.box, s.final_score[best], ax, ay};
    if (out_maps) *out_maps = std::move(s);
    return r;
  }

  static BBox clip_box(const BBox& b, double fw, double fh) {
    return {std::clamp(b.x0, 0.0, fw), std::clamp(b.y0, 0.0, fh), std::clamp(b.x1, 0.0, fw), std::clamp(b.y1, 0.0, fh)};
  }

 private:
  const SiameseModel<T>& model_;
  TrackerState<T> state_;
};

/// Annotated frame: predicted box blue, gt red (when given), frame index top
/// left, IoU bottom right.
inline cv::Mat render_frame(const Image& frame, std::size_t index, const BBox& pred, const std::optional<BBox>& gt) {
  cv::Mat m = to_mat(frame);
  auto rect = [](const BBox& b) {
    return cv::Rect(cv::Point(static_cast<int>(std::lround(b.x0)), static_cast<int>(std::lround(b.y0))),
                    cv::Point(static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1))));
  };
  if (gt) cv::rectangle(m, rect(*gt), cv::Scalar(0, 0, 255), 2);
  cv::rectangle(m, rect(pred), cv::Scalar(255, 0, 0), 2);
  const double font = 0.5;
  cv::putText(m, "#" + std::to_string(index + 1), cv::Point(4, 16), cv::FONT_HERSHEY_SIMPLEX, font,
              cv::Scalar(0, 255, 255), 1, cv::LINE_AA);
  if (gt) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "IoU %.2f", iou(pred, *gt));
    int base = 0;
    const cv::Size sz = cv::getTextSize(buf, cv::FONT_HERSHEY_SIMPLEX, font, 1, &base);
    cv::putText(m, buf, cv::Point(m.cols - sz.width - 4, m.rows - 6), cv::FONT_HERSHEY_SIMPLEX, font,
                cv::Scalar(0, 255, 255), 1, cv::LINE_AA);
  }
  return m;
}

/// One-pass tracking: init on frame 0's box, update on every later frame.
/// With `render_dir`, writes one annotated PNG per frame.
template <typename T>
std::vector<BBox> track_sequence(const Sequence& seq, const SiameseModel<T>& model, const TrackerConfig& cfg,
                                 const std::filesystem::path& render_dir = {},
                                 const std::function<void(std::size_t, const TrackResult&)>& on_frame = {}) {
  if (seq.size() == 0) throw DataError(seq.name + ": empty sequence");
  if (seq.gt.empty()) throw DataError(seq.name + ": no frame-0 box");
  if (!render_dir.empty()) std::filesystem::create_directories(render_dir);
  auto read = [&](std::size_t i) {
    try {
      return seq.frame(i);
    } catch (const std::exception& e) {
      throw DataError(seq.name + ": cannot read frame " + std::to_string(i) + ": " + e.what());
    }
  };
  auto gt_at = [&](std::size_t i) -> std::optional<BBox> {
    if (i < seq.gt.size()) return seq.gt[i];
    return std::nullopt;
  };
  Tracker<T> tracker(model, cfg);
  std::vector<BBox> boxes;
  Image f0 = read(0);
  tracker.init(f0, seq.gt[0]);
  boxes.push_back(seq.gt[0]);
  if (!render_dir.empty()) write_image(render_dir / frame_file_name(0), render_frame(f0, 0, seq.gt[0], gt_at(0)));
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const Image f = read(i);
    const TrackResult r = tracker.update(f);
    boxes.push_back(r.box);
    if (on_frame) on_frame(i, r);
    if (!render_dir.empty()) write_image(render_dir / frame_file_name(i), render_frame(f, i, r.box, gt_at(i)));
  }
  return boxes;
}

}  // namespace ssfc
