#pragma once

// Pair sampling and the epoch loop: forward, total loss, backward, SGD.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ssfc/checkpoint.hpp"
#include "ssfc/crop.hpp"
#include "ssfc/losses.hpp"

namespace ssfc {

struct TrainConfig {
  std::size_t T = 6;
  std::size_t batch_size = 16;
  double lr = 0.01;
  std::size_t max_epoch = 20;
  std::size_t iters_per_epoch = 100;
  QualityKind quality_kind = QualityKind::kPSS;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  RegLossForm reg_form = RegLossForm::kOneMinusIoU;
  std::uint64_t seed = 1;

  std::size_t max_gap = 50;  // frames between template and search
  double jitter = 32;        // search-centre jitter, crop pixels
  double rate_target = 0.15; // firing rate the backbone init is balanced to; 0 disables
  double cls_prior = 0.01;
  double reg_prior = 32;     // initial regressed offset, crop pixels

  std::size_t total_iterations() const { return max_epoch * iters_per_epoch; }

  void validate() const {
    if (T < 1 || batch_size < 1 || max_epoch < 1 || iters_per_epoch < 1) {
      throw Error("train config: T, batch_size, max_epoch and iters_per_epoch must be positive");
    }
    if (!(lr >= 0) || !std::isfinite(lr)) throw Error("train config: lr must be finite and >= 0");
    if (!(focal_gamma >= 0) || !(focal_alpha > 0 && focal_alpha < 1)) throw Error("train config: bad focal parameters");
    if (!(jitter >= 0)) throw Error("train config: jitter must be >= 0");
    if (!(rate_target >= 0 && rate_target < 1)) throw Error("train config: rate_target must be in [0, 1)");
  }
};

struct TrainingPair {
  Image templ;    // [3, 127, 127]
  Image search;   // [3, 303, 303]
  BBox gt_crop;   // search-frame gt in search-crop coordinates
  std::size_t template_frame = 0, search_frame = 0;
};

/// Template frame i and search frame j with |i - j| <= max_gap. The template
/// is cropped around its gt; the search crop is centred on the search-frame
/// gt plus uniform jitter, with side scaled from the template-frame box.
inline TrainingPair sample_pair(const Sequence& seq, std::mt19937_64& rng, const TrainConfig& cfg) {
  const std::size_t n = seq.size();
  if (n < 2 || !seq.fully_annotated()) throw DataError(seq.name + ": training needs >= 2 annotated frames");
  auto usable = [&](std::size_t i) { return seq.gt[i].finite() && seq.gt[i].width() > 0 && seq.gt[i].height() > 0; };
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_real_distribution<double> jit(-cfg.jitter, cfg.jitter);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const std::size_t i = pick(rng);
    const std::size_t lo = i >= cfg.max_gap ? i - cfg.max_gap : 0;
    const std::size_t hi = std::min(n - 1, i + cfg.max_gap);
    const std::size_t j = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    const double jx = jit(rng), jy = jit(rng);
    if (!usable(i) || !usable(j)) continue;

    const BBox& zb = seq.gt[i];
    const BBox& xb = seq.gt[j];
    const double zside = context_side(zb.width(), zb.height());
    const double xside = search_side(zside);
    const double k = xside / kSearchSize;  // image pixels per crop pixel
    TrainingPair p;
    p.template_frame = i;
    p.search_frame = j;
    p.templ = crop_patch(seq.frame(i), zb.cx(), zb.cy(), zside, kTemplateSize);
    const CropGeometry g{xb.cx() + jx * k, xb.cy() + jy * k, xside, kSearchSize};
    p.search = crop_patch(seq.frame(j), g.cx, g.cy, g.side, kSearchSize);
    p.gt_crop = g.image_to_crop(xb);
    return p;
  }
  throw DataError(seq.name + ": no usable frame pair found");
}

struct MetricsRow {
  std::size_t epoch = 0;  // 1-based
  std::size_t iter = 0;   // 1-based, global
  double iou = 0;         // mean IoU of the predicted boxes at positive cells
  double cls_loss = 0;    // each term already divided by N_pos
  double quality_loss = 0;
  double reg_loss = 0;

  double total() const { return cls_loss + quality_loss + reg_loss; }
};

inline constexpr const char* kMetricsHeader = "epoch,iter,iou,cls_loss,quality_loss,reg_loss";

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g", r.epoch, r.iter, r.iou, r.cls_loss, r.quality_loss,
                r.reg_loss);
  return buf;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError(path.string() + ": bad metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf", &r.epoch, &r.iter, &r.iou, &r.cls_loss, &r.quality_loss,
                    &r.reg_loss) != 6) {
      throw DataError(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

/// Stacks [3, S, S] images into one [N, 3, S, S] batch.
template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Shape& s = images.front()->shape();
  Tensor<T> out(Shape{images.size(), s[0], s[1], s[2]});
  const std::size_t n = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ShapeError("stack_images: mixed image shapes");
    std::copy(images[i]->data().begin(), images[i]->data().end(), out.data().begin() + i * n);
  }
  return out;
}

/// Fresh model for `cfg`: seeded init, backbone rates balanced on search
/// crops of the training data, output biases from priors.
template <typename T>
SiameseModel<T> init_model(const TrainConfig& cfg, const std::vector<Sequence>& data, const IFConfig& neuron = {}) {
  cfg.validate();
  ModelConfig mc;
  mc.if_config = neuron;
  mc.time_steps = cfg.T;
  mc.quality_kind = cfg.quality_kind;
  SiameseModel<T> model(mc, cfg.seed);
  if (cfg.rate_target > 0 && !data.empty()) {
    std::vector<Image> crops;
    for (const auto& seq : data) {
      if (seq.gt.empty()) continue;
      const BBox& b = seq.gt[0];
      crops.push_back(crop_patch(seq.frame(0), b.cx(), b.cy(), search_side(context_side(b.width(), b.height())),
                                 kSearchSize));
      if (crops.size() == 4) break;
    }
    std::vector<const Image*> ptrs;
    for (const auto& c : crops) ptrs.push_back(&c);
    if (!ptrs.empty()) model.backbone().balance_rates(Var<T>::constant(stack_images<T>(ptrs)), cfg.T, cfg.rate_target);
  }
  set_output_priors(model.head(), cfg.cls_prior, cfg.reg_prior);
  return model;
}

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_iteration;
  std::function<void(const MetricsRow& epoch_mean)> on_epoch;  // iter = last iteration of the epoch
  // Checked after each iteration; true ends training early. The rows logged
  // so far are a prefix of the untruncated run.
  std::function<bool(const MetricsRow&)> stop;
};

/// One SGD step on a batch. Samples run one at a time (memory) and share the
/// batch-wide N_pos, so the accumulated gradient equals the full-batch one.
template <typename T>
MetricsRow train_step(SiameseModel<T>& model, const std::vector<TrainingPair>& batch, const TrainConfig& cfg) {
  std::vector<LabelSet> labels;
  std::size_t n_pos = 0;
  for (const auto& p : batch) {
    labels.push_back(assign_labels(crop_to_grid(p.gt_crop), kTotalStride, kScoreSize, cfg.quality_kind));
    n_pos += labels.back().positives();
  }
  if (n_pos == 0) throw Error("train_step: no positive samples");
  LossConfig lc;
  lc.focal_gamma = cfg.focal_gamma;
  lc.focal_alpha = cfg.focal_alpha;
  lc.reg_form = cfg.reg_form;

  auto params = model.named_parameters();
  for (auto& [name, v] : params) v.zero_grad();
  MetricsRow row;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Var<T> z = Var<T>::constant(batch[b].templ.template cast<T>().reshaped({1, 3, kTemplateSize, kTemplateSize}));
    const Var<T> x = Var<T>::constant(batch[b].search.template cast<T>().reshaped({1, 3, kSearchSize, kSearchSize}));
    const HeadMaps<T> maps = model.forward(z, x);
    const LossResult<T> loss = total_loss(maps, {labels[b]}, lc, n_pos);
    backward(loss.total);
    row.iou += loss.iou_sum;
    row.cls_loss += loss.cls_sum;
    row.quality_loss += loss.quality_sum;
    row.reg_loss += loss.reg_sum;
  }
  const double inv = 1.0 / static_cast<double>(n_pos);
  row.iou *= inv;
  row.cls_loss *= inv;
  row.quality_loss *= inv;
  row.reg_loss *= inv;
  for (auto& [name, v] : params) {
    if (!v.has_grad()) continue;
    if (!v.grad().all_finite()) throw NumericError("non-finite gradient in " + name);
  }
  for (auto& [name, v] : params) {
    if (v.has_grad()) sgd_step(v.mutable_value(), v.grad(), static_cast<T>(cfg.lr));
    v.zero_grad();
  }
  return row;
}

/// Draws a batch, resampling while it has no positive cell.
inline std::vector<TrainingPair> sample_batch(const std::vector<Sequence>& data, std::mt19937_64& rng,
                                              const TrainConfig& cfg) {
  if (data.empty()) throw DataError("training set is empty");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<TrainingPair> batch;
    std::size_t n_pos = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(sample_pair(data[pick(rng)], rng, cfg));
      const BBox g = crop_to_grid(batch.back().gt_crop);
      if (g.valid() && g.area() > 0) n_pos += assign_labels(g, kTotalStride, kScoreSize, cfg.quality_kind).positives();
    }
    if (n_pos > 0) return batch;
  }
  throw DataError("could not sample a batch with positive cells");
}

/// Runs cfg.max_epoch epochs of cfg.iters_per_epoch iterations and returns
/// one row per iteration.
template <typename T>
std::vector<MetricsRow> train(SiameseModel<T>& model, const std::vector<Sequence>& data, const TrainConfig& cfg,
                              const TrainHooks& hooks = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eed5eedull);
  std::vector<MetricsRow> rows;
  std::size_t iter = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epoch; ++epoch) {
    MetricsRow mean;
    for (std::size_t k = 0; k < cfg.iters_per_epoch; ++k) {
      const auto batch = sample_batch(data, rng, cfg);
      MetricsRow r = train_step(model, batch, cfg);
      r.epoch = epoch;
      r.iter = ++iter;
      rows.push_back(r);
      if (hooks.on_iteration) hooks.on_iteration(r);
      if (hooks.stop && hooks.stop(r)) return rows;
      mean.iou += r.iou;
      mean.cls_loss += r.cls_loss;
      mean.quality_loss += r.quality_loss;
      mean.reg_loss += r.reg_loss;
    }
    const double inv = 1.0 / static_cast<double>(cfg.iters_per_epoch);
    mean.epoch = epoch;
    mean.iter = iter;
    mean.iou *= inv;
    mean.cls_loss *= inv;
    mean.quality_loss *= inv;
    mean.reg_loss *= inv;
    if (hooks.on_epoch) hooks.on_epoch(mean);
  }
  return rows;
}

inline std::map<std::string, std::string> train_metadata(const TrainConfig& cfg) {
  return {{"seed", std::to_string(cfg.seed)},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"lr", format_number(cfg.lr)},
          {"focal_gamma", format_number(cfg.focal_gamma)},
          {"focal_alpha", format_number(cfg.focal_alpha)},
          {"reg_loss", cfg.reg_form == RegLossForm::kOneMinusIoU ? "1-iou" : "-ln-iou"}};
}

/// Trains and writes `out_dir/metrics.csv` (one row per iteration), a
/// checkpoint per epoch (`epoch_NNN.ssfc`) and the final one at `final_ckpt`.
template <typename T>
std::vector<MetricsRow> run_training(SiameseModel<T>& model, const std::vector<Sequence>& data, const TrainConfig& cfg,
                                     const std::filesystem::path& out_dir, const std::filesystem::path& final_ckpt,
                                     std::map<std::string, std::string> extra_meta = {},
                                     std::function<void(const MetricsRow&)> on_epoch = {}) {
  std::filesystem::create_directories(out_dir);
  const auto csv_path = out_dir / "metrics.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw DataError("cannot write " + csv_path.string());
  csv << kMetricsHeader << '\n';
  auto meta = train_metadata(cfg);
  meta.insert(extra_meta.begin(), extra_meta.end());
  TrainHooks hooks;
  hooks.on_iteration = [&](const MetricsRow& r) { csv << format_metrics_row(r) << '\n' << std::flush; };
  hooks.on_epoch = [&](const MetricsRow& m) {
    auto em = meta;
    em["epoch"] = std::to_string(m.epoch);
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.ssfc", m.epoch);
    save_checkpoint((out_dir / name).string(), make_checkpoint(model, em));
    if (on_epoch) on_epoch(m);
  };
  auto rows = train(model, data, cfg, hooks);
  meta["epoch"] = std::to_string(cfg.max_epoch);
  if (!final_ckpt.empty()) save_checkpoint(final_ckpt.string(), make_checkpoint(model, meta));
  return rows;
}

}  // namespace ssfc
