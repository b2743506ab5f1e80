#include <gtest/gtest.h>

#include <regex>

#include "ssfc/metrics.hpp"
#include "test_util.hpp"

using namespace ssfc;
using namespace ssfc::testing;

namespace {

BBox centred(double cx, double cy, double side = 10) { return BBox::from_center(cx, cy, side, side); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Balanced-tag check for the subset of XML the plot writer uses.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t roots = 0;
  static const std::regex tag(R"(<(/?)([A-Za-z?][\w:-]*)([^<>]*?)(/?)>)");
  std::string rest;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), tag); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    rest += s.substr(last, static_cast<std::size_t>(m.position()) - last);
    last = static_cast<std::size_t>(m.position() + m.length());
    const std::string name = m[2];
    if (name.front() == '?') continue;
    // Attributes: name="value" pairs only.
    static const std::regex attrs(R"((\s+[\w:-]+="[^"<&]*")*\s*)");
    std::string a = m[3];
    if (!a.empty() && a.back() == '?') return false;
    if (!std::regex_match(a, attrs)) return false;
    if (m[1] == "/") {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (m[4] == "/") {
      if (stack.empty()) ++roots;
    } else {
      if (stack.empty()) ++roots;
      stack.push_back(name);
    }
  }
  rest += s.substr(last);
  rest = std::regex_replace(rest, std::regex("&(amp|lt|gt|quot|apos);"), "");
  return stack.empty() && roots == 1 && rest.find_first_of("<>&") == std::string::npos;
}

}  // namespace

TEST(CenterDistance, Examples) {
  EXPECT_EQ(center_distance(centred(5, 5), centred(5, 5)), 0.0);
  EXPECT_DOUBLE_EQ(center_distance(centred(0, 0), centred(3, 4)), 5.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 100; ++i) {
    const BBox a = centred(u(rng), u(rng)), b = centred(u(rng), u(rng));
    const double d = u(rng);
    EXPECT_NEAR(center_distance(a, b), center_distance(centred(a.cx() + d, a.cy() + d), centred(b.cx() + d, b.cy() + d)),
                1e-9);
  }
}

TEST(Precision, Examples) {
  std::vector<BBox> gts(4, centred(50, 50));
  const auto perfect = precision_curve(gts, gts);
  EXPECT_EQ(perfect.values.size(), 51u);
  EXPECT_EQ(perfect.at(0), 0.0);
  for (int t = 1; t <= 50; ++t) EXPECT_EQ(perfect.at(t), 1.0);

  std::vector<BBox> off(4, centred(60, 50));
  const auto step = precision_curve(off, gts);
  for (int t = 0; t <= 50; ++t) EXPECT_EQ(step.at(t), t > 10 ? 1.0 : 0.0) << t;

  const std::vector<BBox> p3{centred(0, 0), centred(10, 0), centred(30, 0)}, g3(3, centred(0, 0));
  EXPECT_DOUBLE_EQ(precision_curve(p3, g3).at(20), 2.0 / 3);
  EXPECT_THROW(precision_curve({}, {}), Error);
  EXPECT_THROW(precision_curve(p3, gts), Error);
}

TEST(Success, Examples) {
  std::vector<BBox> gts(3, BBox{0, 0, 2, 1});
  const auto perfect = success_curve(gts, gts);
  EXPECT_EQ(perfect.values.size(), 101u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(perfect.values[i], 1.0);
  EXPECT_EQ(perfect.values[100], 0.0);

  std::vector<BBox> half(3, BBox{0, 0, 1, 1});
  const auto step = success_curve(half, gts);
  for (std::size_t i = 0; i <= 100; ++i) EXPECT_EQ(step.values[i], step.thresholds[i] < 0.5 ? 1.0 : 0.0) << i;

  // IoUs 0.2, 0.6, 0.9 against a 0..1 unit-height strip.
  const BBox g{0, 0, 10, 1};
  const std::vector<BBox> p{BBox{0, 0, 2, 1}, BBox{0, 0, 6, 1}, BBox{0, 0, 9, 1}};
  EXPECT_DOUBLE_EQ(success_curve(p, std::vector<BBox>(3, g)).at(0.5), 2.0 / 3);
  EXPECT_THROW(success_curve({}, {}), Error);
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc({success_thresholds(), std::vector<double>(101, 1.0)}), 1.0);
  EXPECT_EQ(auc({success_thresholds(), std::vector<double>(101, 0.5)}), 0.5);
  Curve ramp{success_thresholds(), {}};
  for (double t : ramp.thresholds) ramp.values.push_back(1 - t);
  EXPECT_NEAR(auc(ramp), 0.5, 1e-12);
}

TEST(ErrorSeriesTest, Examples) {
  std::vector<BBox> gts;
  for (int i = 0; i < 10; ++i) gts.push_back(centred(10.0 * i, 5));
  const auto zero = error_series(gts, gts);
  for (double e : zero.errors) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(zero.mean, 0.0);
  std::vector<BBox> shifted;
  for (const auto& g : gts) shifted.push_back(centred(g.cx() + 3, g.cy() + 4));
  const auto five = error_series(shifted, gts);
  for (double e : five.errors) EXPECT_NEAR(e, 5.0, 1e-12);
  EXPECT_NEAR(five.mean, 5.0, 1e-12);
  EXPECT_NEAR(five.running_mean.back(), five.mean, 1e-12);
  EXPECT_THROW(error_series(shifted, {}), Error);
}

TEST(Curves, OracleMonotonicityAndScale) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0, 100), side(2, 40), k(0.5, 3);
  std::uniform_int_distribution<int> len(1, 20);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    std::vector<BBox> p, g;
    for (int i = 0; i < n; ++i) {
      g.push_back(BBox::from_xywh(pos(rng), pos(rng), side(rng), side(rng)));
      p.push_back(BBox::from_xywh(g.back().x0 + pos(rng) / 5 - 10, g.back().y0 + pos(rng) / 5 - 10, side(rng), side(rng)));
    }
    const auto pc = precision_curve(p, g), sc = success_curve(p, g);
    for (std::size_t t = 0; t < pc.values.size(); ++t) {
      int count = 0;
      for (int i = 0; i < n; ++i) {
        const double dx = p[i].cx() - g[i].cx(), dy = p[i].cy() - g[i].cy();
        count += std::sqrt(dx * dx + dy * dy) < pc.thresholds[t];
      }
      EXPECT_EQ(pc.values[t], static_cast<double>(count) / n);
      if (t) {
        EXPECT_GE(pc.values[t], pc.values[t - 1]);
      }
    }
    for (std::size_t t = 0; t < sc.values.size(); ++t) {
      int count = 0;
      for (int i = 0; i < n; ++i) {
        const double iw = std::max(0.0, std::min(p[i].x1, g[i].x1) - std::max(p[i].x0, g[i].x0));
        const double ih = std::max(0.0, std::min(p[i].y1, g[i].y1) - std::max(p[i].y0, g[i].y0));
        const double inter = iw * ih;
        count += inter / (p[i].area() + g[i].area() - inter) > sc.thresholds[t];
      }
      EXPECT_EQ(sc.values[t], static_cast<double>(count) / n);
      if (t) {
        EXPECT_LE(sc.values[t], sc.values[t - 1]);
      }
    }
    // Scaling everything by s: distances scale, IoUs do not.
    const double s = k(rng);
    std::vector<BBox> ps, gs;
    for (int i = 0; i < n; ++i) {
      ps.push_back({p[i].x0 * s, p[i].y0 * s, p[i].x1 * s, p[i].y1 * s});
      gs.push_back({g[i].x0 * s, g[i].y0 * s, g[i].x1 * s, g[i].y1 * s});
      EXPECT_NEAR(center_distance(ps[i], gs[i]), s * center_distance(p[i], g[i]), 1e-9);
      EXPECT_NEAR(iou(ps[i], gs[i]), iou(p[i], g[i]), 1e-12);
    }
  }
}

TEST(EmitPlot, CsvAndSvg) {
  const auto dir = temp_dir("emit_plot");
  std::vector<BBox> g(5, centred(20, 20)), p;
  for (int i = 0; i < 5; ++i) p.push_back(centred(20 + 3.3 * i, 20));
  const auto c = precision_curve(p, g);
  emit_plot(c, dir / "prec", "precision & <test>");
  const auto text = slurp(dir / "prec.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(c.values.size() + 1));
  const auto back = read_curve_csv(dir / "prec.csv");
  EXPECT_EQ(back.thresholds, c.thresholds);
  EXPECT_EQ(back.values, c.values);
  emit_plot(error_series(p, g), dir / "err");
  EXPECT_EQ(read_curve_csv(dir / "err.csv").values.size(), 5u);
  for (const auto* f : {"prec.svg", "err.svg"}) EXPECT_TRUE(well_formed_xml(slurp(dir / f))) << f;
  EXPECT_THROW(emit_plot(c, "/proc/ssfc_no_such_dir/x"), DataError);
}

TEST(EmitPlot, XmlCheckerRejectsBrokenDocuments) {
  EXPECT_TRUE(well_formed_xml("<?xml version=\"1.0\"?>\n<svg a=\"1\"><g><line x=\"2\"/></g></svg>\n"));
  EXPECT_FALSE(well_formed_xml("<svg><g></svg></g>"));
  EXPECT_FALSE(well_formed_xml("<svg><text>a & b</text></svg>"));
  EXPECT_TRUE(well_formed_xml("<svg><text>a &amp; &lt;b&gt;</text></svg>"));
  EXPECT_FALSE(well_formed_xml("<svg a=1></svg>"));
}

TEST(Report, MeansOverSequences) {
  std::vector<BBox> g(4, centred(50, 50));
  std::vector<BBox> near(4, centred(53, 54)), far(4, centred(90, 50));
  auto a = evaluate_sequence("a", near, g), b = evaluate_sequence("b", far, g);
  EXPECT_EQ(a.precision_at_20, 1.0);
  EXPECT_EQ(b.precision_at_20, 0.0);
  const auto r = make_report({a, b});
  EXPECT_DOUBLE_EQ(r.mean_precision_at_20, 0.5);
  EXPECT_DOUBLE_EQ(r.mean_iou, (a.mean_iou + b.mean_iou) / 2);
  EXPECT_DOUBLE_EQ(r.mean_success_auc, (a.success_auc + b.success_auc) / 2);
  EXPECT_DOUBLE_EQ(r.mean_error, (5.0 + 40.0) / 2);
  for (std::size_t i = 0; i < r.mean_precision.values.size(); ++i)
    EXPECT_DOUBLE_EQ(r.mean_precision.values[i], (a.precision.values[i] + b.precision.values[i]) / 2);
  EXPECT_THROW(make_report({}), Error);

  const auto dir = temp_dir("report");
  write_report(r, dir);
  const auto text = slurp(dir / "report.txt");
  EXPECT_NE(text.find("MEAN"), std::string::npos);
  for (const auto* f : {"precision.csv", "success.svg", "a/error.csv", "b/success.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
}
