#pragma once

// One-pass evaluation: precision and success curves, AUC, per-frame center
// error, and CSV/SVG output.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssfc/data_io.hpp"

namespace ssfc {

struct Curve {
  std::vector<double> thresholds;
  std::vector<double> values;

  double at(double threshold) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (thresholds[i] == threshold) return values[i];
    throw Error("curve has no threshold " + format_number(threshold));
  }
};

inline std::vector<double> precision_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 50; ++i) t.push_back(i);
  return t;
}

inline std::vector<double> success_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(i / 100.0);
  return t;
}

namespace detail {
inline void check_pairs(const std::vector<BBox>& preds, const std::vector<BBox>& gts, const char* what) {
  if (preds.empty() || gts.empty()) throw Error(std::string(what) + ": empty box lists");
  if (preds.size() != gts.size()) {
    throw Error(std::string(what) + ": " + std::to_string(preds.size()) + " predictions vs " +
                std::to_string(gts.size()) + " ground-truth boxes");
  }
}

inline Curve fraction_curve(const std::vector<double>& scores, std::vector<double> thresholds, bool below) {
  Curve c{std::move(thresholds), {}};
  for (double th : c.thresholds) {
    std::size_t n = 0;
    for (double s : scores) n += below ? (s < th) : (s > th);
    c.values.push_back(static_cast<double>(n) / static_cast<double>(scores.size()));
  }
  return c;
}
}  // namespace detail

/// Fraction of frames with center distance strictly below each threshold.
inline Curve precision_curve(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                             std::vector<double> thresholds = precision_thresholds()) {
  detail::check_pairs(preds, gts, "precision_curve");
  std::vector<double> d;
  for (std::size_t i = 0; i < preds.size(); ++i) d.push_back(center_distance(preds[i], gts[i]));
  return detail::fraction_curve(d, std::move(thresholds), true);
}

/// Fraction of frames with IoU strictly above each threshold.
inline Curve success_curve(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                           std::vector<double> thresholds = success_thresholds()) {
  detail::check_pairs(preds, gts, "success_curve");
  std::vector<double> o;
  for (std::size_t i = 0; i < preds.size(); ++i) o.push_back(iou(preds[i], gts[i]));
  return detail::fraction_curve(o, std::move(thresholds), false);
}

/// Mean of the curve values (uniform threshold grid).
inline double auc(const Curve& c) {
  if (c.values.empty()) return 0;
  double s = 0;
  for (double v : c.values) s += v;
  return s / static_cast<double>(c.values.size());
}

struct ErrorSeries {
  std::vector<double> errors;        // center distance per frame
  std::vector<double> running_mean;  // mean of errors[0..i]
  double mean = 0;
};

inline ErrorSeries error_series(const std::vector<BBox>& preds, const std::vector<BBox>& gts) {
  if (preds.size() != gts.size()) throw Error("error_series: length mismatch");
  ErrorSeries s;
  double acc = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s.errors.push_back(center_distance(preds[i], gts[i]));
    acc += s.errors.back();
    s.running_mean.push_back(acc / static_cast<double>(i + 1));
  }
  s.mean = s.errors.empty() ? 0 : acc / static_cast<double>(s.errors.size());
  return s;
}

// ---------------------------------------------------------------------------
// Plot output

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel) {
  const double W = 480, H = 360, L = 60, R = 20, Tm = 30, B = 50;
  double x0 = xs.empty() ? 0 : xs.front(), x1 = xs.empty() ? 1 : xs.back();
  double y0 = 0, y1 = 1;
  for (double y : ys) y1 = std::max(y1, y);
  if (x1 <= x0) x1 = x0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - Tm - B); };
  std::ostringstream os;
  os.precision(6);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << xml_escape(xlabel) << "</text>\n"
     << "<text x=\"16\" y=\"" << (Tm + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << (Tm + H - B) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << xv
       << "</text>\n"
       << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << yv
       << "</text>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"#1f4fd8\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? " " : "") << px(xs[i]) << ',' << py(ys[i]);
  os << "\"/>\n</svg>\n";
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw DataError("cannot write " + path.string() + ": " + ec.message());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

inline void emit_xy(const std::vector<double>& xs, const std::vector<double>& ys, const std::filesystem::path& stem,
                    const std::string& header, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel) {
  std::string csv = header + "\n";
  for (std::size_t i = 0; i < xs.size(); ++i) csv += format_number(xs[i]) + "," + format_number(ys[i]) + "\n";
  write_text(std::filesystem::path(stem.string() + ".csv"), csv);
  write_text(std::filesystem::path(stem.string() + ".svg"), svg_line_plot(xs, ys, title, xlabel, ylabel));
}

}  // namespace detail

/// Writes `stem.csv` (threshold,value) and `stem.svg`.
inline void emit_plot(const Curve& c, const std::filesystem::path& stem, const std::string& title = "curve",
                      const std::string& xlabel = "threshold") {
  detail::emit_xy(c.thresholds, c.values, stem, "threshold,value", title, xlabel, "fraction of frames");
}

/// Writes `stem.csv` (frame,error) and `stem.svg`.
inline void emit_plot(const ErrorSeries& s, const std::filesystem::path& stem, const std::string& title = "error") {
  std::vector<double> frames;
  for (std::size_t i = 0; i < s.errors.size(); ++i) frames.push_back(static_cast<double>(i));
  detail::emit_xy(frames, s.errors, stem, "frame,error", title, "frame", "center error (px)");
}

inline Curve read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  Curve c;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ":" + std::to_string(n) + ": malformed row");
    c.thresholds.push_back(detail::parse_number(std::string_view(line).substr(0, comma), n, path));
    c.values.push_back(detail::parse_number(std::string_view(line).substr(comma + 1), n, path));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr double kPrecisionThreshold = 20;

struct SequenceEval {
  std::string name;
  Curve precision, success;
  double precision_at_20 = 0;
  double success_auc = 0;
  double mean_iou = 0;
  ErrorSeries errors;
};

inline SequenceEval evaluate_sequence(const std::string& name, const std::vector<BBox>& preds,
                                      const std::vector<BBox>& gts) {
  SequenceEval e;
  e.name = name;
  e.precision = precision_curve(preds, gts);
  e.success = success_curve(preds, gts);
  e.precision_at_20 = e.precision.at(kPrecisionThreshold);
  e.success_auc = auc(e.success);
  for (std::size_t i = 0; i < preds.size(); ++i) e.mean_iou += iou(preds[i], gts[i]);
  e.mean_iou /= static_cast<double>(preds.size());
  e.errors = error_series(preds, gts);
  return e;
}

struct EvalReport {
  std::vector<SequenceEval> sequences;
  double mean_precision_at_20 = 0;
  double mean_success_auc = 0;
  double mean_iou = 0;
  double mean_error = 0;
  Curve mean_precision, mean_success;

  std::string to_text() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %10s %10s %10s %12s\n", "sequence", "prec@20px", "succ_auc", "mean_iou",
                  "mean_err_px");
    os << buf;
    auto row = [&](const std::string& n, double p, double s, double i, double e) {
      std::snprintf(buf, sizeof buf, "%-24s %10.4f %10.4f %10.4f %12.3f\n", n.c_str(), p, s, i, e);
      os << buf;
    };
    for (const auto& s : sequences) row(s.name, s.precision_at_20, s.success_auc, s.mean_iou, s.errors.mean);
    row("MEAN", mean_precision_at_20, mean_success_auc, mean_iou, mean_error);
    return os.str();
  }
};

/// Arithmetic means over sequences, including the mean curves.
inline EvalReport make_report(std::vector<SequenceEval> seqs) {
  if (seqs.empty()) throw Error("make_report: no sequences");
  EvalReport r;
  r.sequences = std::move(seqs);
  const double n = static_cast<double>(r.sequences.size());
  r.mean_precision = {precision_thresholds(), std::vector<double>(precision_thresholds().size(), 0.0)};
  r.mean_success = {success_thresholds(), std::vector<double>(success_thresholds().size(), 0.0)};
  for (const auto& s : r.sequences) {
    r.mean_precision_at_20 += s.precision_at_20 / n;
    r.mean_success_auc += s.success_auc / n;
    r.mean_iou += s.mean_iou / n;
    r.mean_error += s.errors.mean / n;
    for (std::size_t i = 0; i < s.precision.values.size(); ++i) r.mean_precision.values[i] += s.precision.values[i] / n;
    for (std::size_t i = 0; i < s.success.values.size(); ++i) r.mean_success.values[i] += s.success.values[i] / n;
  }
  return r;
}

/// report.txt plus precision/success/error plots, overall and per sequence.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  detail::write_text(dir / "report.txt", r.to_text());
  emit_plot(r.mean_precision, dir / "precision", "Precision plot", "location error threshold (px)");
  emit_plot(r.mean_success, dir / "success", "Success plot", "overlap threshold");
  for (const auto& s : r.sequences) {
    emit_plot(s.precision, dir / s.name / "precision", s.name + " precision", "location error threshold (px)");
    emit_plot(s.success, dir / s.name / "success", s.name + " success", "overlap threshold");
    emit_plot(s.errors, dir / s.name / "error", s.name + " center error");
  }
}

}  // namespace ssfc
