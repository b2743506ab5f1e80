#include <gtest/gtest.h>

#include <chrono>

#include "head_gradcheck.hpp"
#include "ssfc/losses.hpp"
#include "test_util.hpp"

using namespace ssfc;
using namespace ssfc::testing;

namespace {

constexpr std::size_t kCells = kScoreSize * kScoreSize;

// Head maps built directly from probability / offset grids.
HeadMaps<double> maps_from(const TensorD& cls, const TensorD& quality, const TensorD& offsets, int stride = 8) {
  auto logit = [](const TensorD& p) {
    TensorD t(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) t[i] = std::log(p[i] / (1 - p[i]));
    return t;
  };
  TensorD raw(offsets.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::log(offsets[i] / stride);
  HeadMaps<double> m;
  m.cls_logits = VarD::parameter(logit(cls));
  m.cls = sigmoid(m.cls_logits);
  m.quality_logits = VarD::parameter(logit(quality));
  m.quality = sigmoid(m.quality_logits);
  m.reg = VarD::parameter(raw);
  return m;
}

TensorD grid(double v, std::size_t ch = 1, std::size_t b = 1) { return TensorD(Shape{b, ch, kScoreSize, kScoreSize}, v); }

// Per-location reference of the combined loss, straight from the scalar ops.
double reference_total(const TensorD& cls, const TensorD& quality, const TensorD& offsets, const LabelSet& l,
                       const LossConfig& cfg) {
  double num = 0;
  for (std::size_t i = 0; i < kCells; ++i) {
    const int c = l.c_star[i] > 0.5 ? 1 : 0;
    num += focal_loss(cls[i], c, cfg.focal_gamma, cfg.focal_alpha);
    if (!c) continue;
    const int x = static_cast<int>(i % kScoreSize), y = static_cast<int>(i / kScoreSize);
    const auto p = grid_to_image(x, y, 8);
    const BBox pred = decode_box({offsets[i], offsets[kCells + i], offsets[2 * kCells + i], offsets[3 * kCells + i]},
                                 p.x, p.y);
    const BBox tgt = decode_box({l.d_star[i], l.d_star[kCells + i], l.d_star[2 * kCells + i], l.d_star[3 * kCells + i]},
                                p.x, p.y);
    const double q_star = l.quality_kind == QualityKind::kIoU ? iou(pred, tgt) : l.q_star[i];
    num += quality_loss(quality[i], q_star) + reg_loss(pred, tgt);
  }
  return num / static_cast<double>(l.positives());
}

}  // namespace

TEST(FocalLoss, Examples) {
  EXPECT_NEAR(focal_loss(0.5, 1, 2, 0.25), 0.25 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(0.5, 1, 2, 0.25), 0.04332, 1e-5);
  EXPECT_LT(focal_loss(1 - 1e-12, 1, 2, 0.25), 1e-12);
  for (double p : {0.1, 0.3, 0.9}) {
    EXPECT_NEAR(focal_loss(p, 1, 0, 0.5), -0.5 * std::log(p), 1e-15);
    EXPECT_NEAR(focal_loss(p, 0, 0, 0.5), -0.5 * std::log(1 - p), 1e-15);
  }
  EXPECT_TRUE(std::isfinite(focal_loss(0.0, 1, 2, 0.25)));
  EXPECT_THROW(focal_loss(std::nan(""), 1, 2, 0.25), NumericError);
}

TEST(QualityLoss, Examples) {
  EXPECT_NEAR(quality_loss(0.5, 0.5), std::log(2.0), 1e-15);
  for (double q : {0.0, 0.3, 1.0}) EXPECT_NEAR(quality_loss(0.5, q), std::log(2.0), 1e-15);
  EXPECT_LT(quality_loss(1 - 1e-12, 1), 1e-6);
  EXPECT_THROW(quality_loss(std::nan(""), 1), NumericError);
}

TEST(RegLoss, Examples) {
  const BBox a{0, 0, 2, 2};
  EXPECT_EQ(reg_loss(a, a), 0.0);
  EXPECT_EQ(reg_loss(a, BBox{5, 5, 6, 6}), 1.0);
  EXPECT_NEAR(reg_loss(a, BBox{1, 1, 3, 3}), 1 - 1.0 / 7, 1e-15);
  EXPECT_NEAR(reg_loss(a, BBox{1, 1, 3, 3}, RegLossForm::kNegLogIoU), std::log(7.0), 1e-12);
}

TEST(ScalarLosses, OracleOnRandomInstances) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> p(1e-4, 1 - 1e-4), g(0, 4), a(0.05, 0.95);
  for (int k = 0; k < 500; ++k) {
    const double pp = p(rng), gamma = g(rng), alpha = a(rng), q = p(rng);
    EXPECT_NEAR(focal_loss(pp, 1, gamma, alpha), -alpha * std::pow(1 - pp, gamma) * std::log(pp), 1e-12);
    EXPECT_NEAR(focal_loss(pp, 0, gamma, alpha), -(1 - alpha) * std::pow(pp, gamma) * std::log(1 - pp), 1e-12);
    EXPECT_NEAR(quality_loss(pp, q), -q * std::log(pp) - (1 - q) * std::log(1 - pp), 1e-12);
  }
}

TEST(TotalLoss, PerfectPredictionsNearZero) {
  const LabelSet l = assign_labels(BBox{-20, -20, 30, 30}, 8, 17, QualityKind::kIoU);
  ASSERT_GT(l.positives(), 0u);
  TensorD cls = grid(1e-9), quality = grid(1 - 1e-9), off(Shape{1, 4, kScoreSize, kScoreSize}, 8.0);
  for (std::size_t i = 0; i < kCells; ++i) {
    if (l.c_star[i] == 0) continue;
    cls[i] = 1 - 1e-9;
    for (std::size_t c = 0; c < 4; ++c) off[c * kCells + i] = l.d_star[c * kCells + i];
  }
  const auto r = total_loss(maps_from(cls, quality, off), {l}, LossConfig{});
  EXPECT_LT(r.total.value().item(), 1e-5);
  EXPECT_NEAR(r.iou_sum, static_cast<double>(l.positives()), 1e-9);
}

TEST(TotalLoss, SinglePositiveFocalTermsOnly) {
  const LabelSet l = assign_labels(BBox{0, 0, 8, 8}, 8, 17, QualityKind::kPSS);
  ASSERT_EQ(l.positives(), 1u);
  TensorD off(Shape{1, 4, kScoreSize, kScoreSize}, 4.0);
  const auto r = total_loss(maps_from(grid(0.5), grid(1 - 1e-12), off), {l}, LossConfig{});
  const double focal = focal_loss(0.5, 1, 2, 0.25) + 288 * focal_loss(0.5, 0, 2, 0.25);
  EXPECT_NEAR(r.total.value().item(), focal, 1e-5);
  EXPECT_NEAR(r.reg_sum, 0.0, 1e-12);
}

TEST(TotalLoss, DoublingPositivesLeavesLossUnchanged) {
  const LabelSet l = assign_labels(BBox{-10, -10, 20, 20}, 8, 17, QualityKind::kPSS);
  std::mt19937_64 rng(12);
  const TensorD cls = random_tensor({1, 1, 17, 17}, rng, 0.05, 0.95);
  const TensorD q = random_tensor({1, 1, 17, 17}, rng, 0.05, 0.95);
  const TensorD off = random_tensor({1, 4, 17, 17}, rng, 2, 30);
  const double one = total_loss(maps_from(cls, q, off), {l}, LossConfig{}).total.value().item();
  auto stack = [](const TensorD& t) {
    TensorD s(Shape{2, t.dim(1), t.dim(2), t.dim(3)});
    std::copy(t.data().begin(), t.data().end(), s.data().begin());
    std::copy(t.data().begin(), t.data().end(), s.data().begin() + t.size());
    return s;
  };
  const auto two = total_loss(maps_from(stack(cls), stack(q), stack(off)), {l, l}, LossConfig{});
  EXPECT_EQ(two.positives, 2 * l.positives());
  EXPECT_NEAR(two.total.value().item(), one, 1e-12);
}

TEST(TotalLoss, MatchesScalarReferenceBothModes) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> c(-30, 150), side(10, 80);
  int checked = 0;
  while (checked < 100) {
    const BBox gt = BBox::from_center(c(rng), c(rng), side(rng), side(rng));
    const auto kind = checked % 2 ? QualityKind::kIoU : QualityKind::kPSS;
    const LabelSet l = assign_labels(gt, 8, 17, kind);
    if (l.positives() == 0) continue;
    const TensorD cls = random_tensor({1, 1, 17, 17}, rng, 0.01, 0.99);
    const TensorD q = random_tensor({1, 1, 17, 17}, rng, 0.01, 0.99);
    const TensorD off = random_tensor({1, 4, 17, 17}, rng, 1, 60);
    LossConfig cfg;
    const auto r = total_loss(maps_from(cls, q, off), {l}, cfg);
    EXPECT_NEAR(r.total.value().item(), reference_total(cls, q, off, l, cfg), 1e-9);
    EXPECT_GE(r.total.value().item(), 0.0);
    ++checked;
  }
}

TEST(TotalLoss, NoPositivesIsAnError) {
  const LabelSet l = assign_labels(BBox{0, 0, 3, 3}, 8, 17, QualityKind::kPSS);
  try {
    total_loss(maps_from(grid(0.5), grid(0.5), TensorD(Shape{1, 4, 17, 17}, 8.0)), {l}, LossConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no positive samples"), std::string::npos);
  }
}

TEST(TotalLoss, NegativesGetNoQualityOrRegGradient) {
  const LabelSet l = assign_labels(BBox{-10, -10, 20, 20}, 8, 17, QualityKind::kPSS);
  std::mt19937_64 rng(14);
  auto m = maps_from(random_tensor({1, 1, 17, 17}, rng, 0.1, 0.9), random_tensor({1, 1, 17, 17}, rng, 0.1, 0.9),
                     random_tensor({1, 4, 17, 17}, rng, 2, 30));
  backward(total_loss(m, {l}, LossConfig{}).total);
  const TensorD gq = m.quality_logits.grad(), gr = m.reg.grad(), gc = m.cls_logits.grad();
  for (std::size_t i = 0; i < kCells; ++i) {
    EXPECT_NE(gc[i], 0.0);
    if (l.c_star[i] != 0) continue;
    EXPECT_EQ(gq[i], 0.0);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(gr[c * kCells + i], 0.0);
  }
}

TEST(TotalLoss, BatchSizeMismatch) {
  const LabelSet l = assign_labels(BBox{-10, -10, 20, 20}, 8, 17, QualityKind::kPSS);
  EXPECT_THROW(total_loss(maps_from(grid(0.5), grid(0.5), TensorD(Shape{1, 4, 17, 17}, 8.0)), {l, l}, LossConfig{}),
               ShapeError);
}

TEST(TotalLoss, GradientWrtHeadMapsMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  const LabelSet l = assign_labels(BBox{-10, -10, 20, 20}, 8, 17, QualityKind::kPSS);
  const std::vector<TensorD> inputs{random_tensor({1, 1, 17, 17}, rng, -2, 2), random_tensor({1, 1, 17, 17}, rng, -2, 2),
                                    random_tensor({1, 4, 17, 17}, rng, -1, 1.5)};
  const auto r = grad_check(
      [&](const std::vector<VarD>& v) {
        HeadMaps<double> m{v[0], sigmoid(v[0]), v[1], sigmoid(v[1]), v[2]};
        return total_loss(m, {l}, LossConfig{}).total;
      },
      inputs, 1e-6, 1e-5, 1e-9);
  EXPECT_LT(r.worst_rel, 1e-5) << r.where;
}

TEST(TotalLoss, HeadParameterGradientsMatchFiniteDifferences) {
  const auto t0 = std::chrono::steady_clock::now();
  auto inst = check::make_head_instance(21);
  ASSERT_GT(inst.labels[0].positives(), 0u);
  const auto rep = check::check_head_gradients(inst, 22);
  EXPECT_EQ(rep.checks, 2 * inst.head.parameters().size());
  EXPECT_LT(rep.worst_rel, 1e-3) << rep.worst_where;
  std::cout << "head gradient check: " << rep.checks << " checks, worst rel " << rep.worst_rel << ", "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
}
