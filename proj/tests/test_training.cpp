#include <gtest/gtest.h>

#include "ssfc/training.hpp"
#include "test_util.hpp"

using namespace ssfc;
using namespace ssfc::testing;

namespace {

std::vector<Sequence> small_data() {
  SyntheticSpec spec;
  spec.n_frames = 12;
  return {make_synthetic(spec)};
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.T = 2;
  cfg.batch_size = 1;
  cfg.max_epoch = 1;
  cfg.iters_per_epoch = 1;
  cfg.rate_target = 0;
  return cfg;
}

std::vector<Tensor<float>> snapshot(SiameseModel<float>& m) {
  std::vector<Tensor<float>> out;
  for (auto& p : m.parameters()) out.push_back(p.value());
  return out;
}

}  // namespace

TEST(SamplePair, ShapesAndGap) {
  const auto data = small_data();
  std::mt19937_64 rng(1);
  TrainConfig cfg;
  cfg.max_gap = 5;
  for (int k = 0; k < 20; ++k) {
    const auto p = sample_pair(data[0], rng, cfg);
    EXPECT_EQ(p.templ.shape(), (Shape{3, 127, 127}));
    EXPECT_EQ(p.search.shape(), (Shape{3, 303, 303}));
    const std::size_t gap = p.template_frame > p.search_frame ? p.template_frame - p.search_frame
                                                             : p.search_frame - p.template_frame;
    EXPECT_LE(gap, 5u);
  }
}

TEST(SamplePair, ZeroJitterCentresTarget) {
  const auto data = small_data();
  std::mt19937_64 rng(2);
  TrainConfig cfg;
  cfg.jitter = 0;
  for (int k = 0; k < 10; ++k) {
    const auto p = sample_pair(data[0], rng, cfg);
    EXPECT_NEAR(p.gt_crop.cx(), 151.5, 1e-9);
    EXPECT_NEAR(p.gt_crop.cy(), 151.5, 1e-9);
  }
}

TEST(SamplePair, JitterBoundedAndZeroGapIsSameFrame) {
  const auto data = small_data();
  std::mt19937_64 rng(3);
  TrainConfig cfg;
  cfg.max_gap = 0;
  for (int k = 0; k < 20; ++k) {
    const auto p = sample_pair(data[0], rng, cfg);
    EXPECT_EQ(p.template_frame, p.search_frame);
    EXPECT_LE(std::abs(p.gt_crop.cx() - 151.5), 32 + 1e-9);
    EXPECT_LE(std::abs(p.gt_crop.cy() - 151.5), 32 + 1e-9);
  }
}

TEST(SamplePair, NeedsTwoAnnotatedFrames) {
  SyntheticSpec spec;
  spec.n_frames = 1;
  std::mt19937_64 rng(4);
  EXPECT_THROW(sample_pair(make_synthetic(spec), rng, TrainConfig{}), DataError);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.T = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.lr = -1;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.focal_alpha = 1.5;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(TrainConfig{}.total_iterations(), 2000u);
}

TEST(Metrics, CsvRoundTrip) {
  const auto dir = temp_dir("metrics_csv");
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i <= 5; ++i) rows.push_back({1, i, 0.1 * i, 1.0 / i, 0.7, 0.3 + 0.01 * i});
  {
    std::ofstream out(dir / "metrics.csv");
    out << kMetricsHeader << '\n';
    for (const auto& r : rows) out << format_metrics_row(r) << '\n';
  }
  const auto back = read_metrics_csv(dir / "metrics.csv");
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].iter, rows[i].iter);
    EXPECT_NEAR(back[i].iou, rows[i].iou, 1e-9);
    EXPECT_NEAR(back[i].cls_loss, rows[i].cls_loss, 1e-9);
    EXPECT_NEAR(back[i].reg_loss, rows[i].reg_loss, 1e-9);
  }
  std::ofstream(dir / "bad.csv") << "epoch,iou\n";
  EXPECT_THROW(read_metrics_csv(dir / "bad.csv"), DataError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = small_data();
  auto cfg = tiny_config();
  cfg.lr = 0;
  auto model = init_model<float>(cfg, data);
  const auto before = snapshot(model);
  const auto rows = train(model, data, cfg);
  ASSERT_EQ(rows.size(), 1u);
  const auto after = snapshot(model);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(before[k], after[k]) << k;
}

TEST(Train, StepChangesParametersAndLogsFiniteMetrics) {
  const auto data = small_data();
  auto cfg = tiny_config();
  auto model = init_model<float>(cfg, data);
  const auto before = snapshot(model);
  const auto rows = train(model, data, cfg);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].epoch, 1u);
  EXPECT_EQ(rows[0].iter, 1u);
  EXPECT_TRUE(std::isfinite(rows[0].total()));
  EXPECT_GE(rows[0].iou, 0.0);
  EXPECT_LE(rows[0].iou, 1.0);
  const auto after = snapshot(model);
  bool head_changed = false;
  for (std::size_t k = 0; k < before.size(); ++k) head_changed = head_changed || !(before[k] == after[k]);
  EXPECT_TRUE(head_changed);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto data = small_data();
  auto cfg = tiny_config();
  cfg.iters_per_epoch = 2;
  auto run = [&] {
    auto model = init_model<float>(cfg, data);
    const auto rows = train(model, data, cfg);
    return std::pair{rows, snapshot(model)};
  };
  const auto [ra, pa] = run();
  const auto [rb, pb] = run();
  ASSERT_EQ(ra.size(), 2u);
  for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(format_metrics_row(ra[i]), format_metrics_row(rb[i]));
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k], pb[k]);
}

TEST(Train, NanWeightNamesTensor) {
  const auto data = small_data();
  auto cfg = tiny_config();
  auto model = init_model<float>(cfg, data);
  model.head().proj_cls.weight.mutable_value()[0] = std::nanf("");
  try {
    train(model, data, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("proj.cls"), std::string::npos) << e.what();
  }
}

TEST(Train, RunTrainingWritesCsvAndCheckpoints) {
  const auto data = small_data();
  auto cfg = tiny_config();
  cfg.max_epoch = 2;
  auto model = init_model<float>(cfg, data);
  const auto dir = temp_dir("run_training");
  std::size_t epochs_seen = 0;
  run_training(model, data, cfg, dir, dir / "final.ssfc", {}, [&](const MetricsRow&) { ++epochs_seen; });
  EXPECT_EQ(epochs_seen, 2u);
  EXPECT_EQ(read_metrics_csv(dir / "metrics.csv").size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_001.ssfc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_002.ssfc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "final.ssfc"));
}

TEST(Train, EmptyDatasetIsDataError) {
  auto cfg = tiny_config();
  auto model = init_model<float>(cfg, {});
  EXPECT_THROW(train(model, {}, cfg), DataError);
}

TEST(StackImages, LayoutAndErrors) {
  Image a(Shape{3, 2, 2}, 1.0f), b(Shape{3, 2, 2}, 2.0f);
  const auto s = stack_images<float>({&a, &b});
  EXPECT_EQ(s.shape(), (Shape{2, 3, 2, 2}));
  EXPECT_EQ(s[0], 1.0f);
  EXPECT_EQ(s[12], 2.0f);
  EXPECT_THROW(stack_images<float>({}), ShapeError);
}
