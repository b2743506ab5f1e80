#pragma once

// Frames, OTB-layout sequences, synthetic sequences and bilinear resizing.
// Images are float tensors [3, H, W] with values in [0, 1].

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ssfc/boxes.hpp"

namespace ssfc {

namespace fs = std::filesystem;

using Image = Tensor<float>;

class DataError : public Error {
 public:
  using Error::Error;
};

inline std::size_t image_height(const Image& im) { return im.dim(1); }
inline std::size_t image_width(const Image& im) { return im.dim(2); }

inline bool supported_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Decodes PNG/JPEG; grayscale files are replicated to three channels.
inline Image read_image(const fs::path& path) {
  if (!supported_image_extension(path)) throw DataError("unsupported image format: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);  // BGR; gray is expanded
  if (m.empty()) throw DataError("cannot decode image: " + path.string());
  Image im(Shape{3, static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols)});
  const std::size_t plane = static_cast<std::size_t>(m.rows) * m.cols;
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.cols + x;
      im[i] = row[x][2] / 255.0f;
      im[plane + i] = row[x][1] / 255.0f;
      im[2 * plane + i] = row[x][0] / 255.0f;
    }
  }
  return im;
}

inline cv::Mat to_mat(const Image& im) {
  const int h = static_cast<int>(image_height(im)), w = static_cast<int>(image_width(im));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  cv::Mat m(h, w, CV_8UC3);
  auto to_byte = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      row[x] = cv::Vec3b(to_byte(im[2 * plane + i]), to_byte(im[plane + i]), to_byte(im[i]));
    }
  }
  return m;
}

inline void write_image(const fs::path& path, const cv::Mat& bgr) {
  if (!supported_image_extension(path)) throw DataError("unsupported image format: " + path.string());
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image: " + path.string());
}

inline void write_image(const fs::path& path, const Image& im) { write_image(path, to_mat(im)); }

/// Bilinear resize with pixel centres at i + 0.5; source coordinates are
/// clamped to the image, so outputs stay within the input range.
inline Image resize_bilinear(const Image& im, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw ShapeError("resize_bilinear: output size must be positive");
  const std::size_t c = im.dim(0), h = im.dim(1), w = im.dim(2);
  Image out(Shape{c, out_h, out_w});
  const double sx = static_cast<double>(w) / out_w, sy = static_cast<double>(h) / out_h;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* p = im.ptr() + ch * h * w;
        const double a = p[y0 * w + x0], b = p[y0 * w + x1], c0 = p[y1 * w + x0], d = p[y1 * w + x1];
        const double top = a + (b - a) * wx, bot = c0 + (d - c0) * wx;
        out[(ch * out_h + oy) * out_w + ox] = static_cast<float>(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

/// Random-access frame provider. Implementations decode lazily and keep at
/// most kMaxResident frames alive.
class FrameSource {
 public:
  static constexpr std::size_t kMaxResident = 2;

  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;

  Image frame(std::size_t i) const {
    if (i >= size()) throw DataError("frame index " + std::to_string(i) + " out of range");
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [idx, im] : cache_) {
      if (idx == i) return *im;
    }
    auto im = std::make_shared<Image>(decode(i));
    cache_.emplace_back(i, im);
    if (cache_.size() > kMaxResident) cache_.pop_front();
    return *im;
  }

  std::size_t resident_frames() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 protected:
  virtual Image decode(std::size_t i) const = 0;

 private:
  mutable std::mutex mu_;
  mutable std::deque<std::pair<std::size_t, std::shared_ptr<Image>>> cache_;
};

class FileFrames final : public FrameSource {
 public:
  explicit FileFrames(std::vector<fs::path> paths) : paths_(std::move(paths)) {}
  std::size_t size() const override { return paths_.size(); }
  const std::vector<fs::path>& paths() const { return paths_; }

 protected:
  Image decode(std::size_t i) const override {
    try {
      return read_image(paths_[i]);
    } catch (const DataError& e) {
      throw DataError("frame " + std::to_string(i) + ": " + e.what());
    }
  }

 private:
  std::vector<fs::path> paths_;
};

class MemoryFrames final : public FrameSource {
 public:
  explicit MemoryFrames(std::vector<Image> frames) : frames_(std::move(frames)) {}
  std::size_t size() const override { return frames_.size(); }

 protected:
  Image decode(std::size_t i) const override { return frames_[i]; }

 private:
  std::vector<Image> frames_;
};

struct Sequence {
  std::string name;
  std::shared_ptr<const FrameSource> frames;
  std::vector<BBox> gt;  // one per frame, or only frame 0 at inference

  std::size_t size() const { return frames ? frames->size() : 0; }
  Image frame(std::size_t i) const { return frames->frame(i); }
  bool fully_annotated() const { return gt.size() == size(); }
};

namespace detail {

inline double parse_number(std::string_view tok, std::size_t line_no, const fs::path& file) {
  while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
  while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw DataError(file.string() + ":" + std::to_string(line_no) + ": malformed value '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

/// Parses an `x,y,w,h` line (comma, tab or space separated).
inline BBox parse_xywh(const std::string& line, std::size_t line_no = 0, const fs::path& file = "box") {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || ch == '\t' || ch == ' ' || ch == '\r') {
      if (!cur.empty()) toks.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  if (toks.size() != 4) {
    throw DataError(file.string() + ":" + std::to_string(line_no) + ": expected 4 values, got " +
                    std::to_string(toks.size()));
  }
  const double x = detail::parse_number(toks[0], line_no, file), y = detail::parse_number(toks[1], line_no, file);
  const double w = detail::parse_number(toks[2], line_no, file), h = detail::parse_number(toks[3], line_no, file);
  return BBox::from_xywh(x, y, w, h);
}

inline std::vector<BBox> read_boxes(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<BBox> boxes;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    boxes.push_back(parse_xywh(line, n, file));
  }
  return boxes;
}

inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string format_xywh(const BBox& b) {
  return format_number(b.x0) + "," + format_number(b.y0) + "," + format_number(b.width()) + "," +
         format_number(b.height());
}

inline void write_boxes(const fs::path& file, const std::vector<BBox>& boxes) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& b : boxes) out << format_xywh(b) << '\n';
  if (!out) throw DataError("cannot write " + file.string());
}

/// Loads an OTB sequence directory: img/ with numbered PNG/JPEG frames and
/// groundtruth_rect.txt. Without the annotation file, `init_box` supplies the
/// frame-0 box.
inline Sequence load_sequence(const fs::path& dir, std::optional<BBox> init_box = std::nullopt) {
  const fs::path img_dir = dir / "img";
  if (!fs::is_directory(img_dir)) throw DataError("missing image directory " + img_dir.string());
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(img_dir)) {
    if (e.is_regular_file() && supported_image_extension(e.path())) paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw DataError("no frames in " + img_dir.string());

  Sequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  const fs::path gt_file = dir / "groundtruth_rect.txt";
  if (fs::exists(gt_file)) {
    seq.gt = read_boxes(gt_file);
    if (seq.gt.size() != paths.size()) {
      throw DataError(seq.name + ": " + std::to_string(paths.size()) + " frames but " +
                      std::to_string(seq.gt.size()) + " annotation lines");
    }
    if (init_box) seq.gt[0] = *init_box;
  } else if (init_box) {
    seq.gt = {*init_box};
  } else {
    throw DataError(seq.name + ": no groundtruth_rect.txt and no initial box given");
  }
  seq.frames = std::make_shared<FileFrames>(std::move(paths));
  return seq;
}

inline std::string frame_file_name(std::size_t i) {
  std::ostringstream os;
  os.fill('0');
  os.width(4);
  os << (i + 1);
  return os.str() + ".png";
}

/// Writes a sequence in OTB layout (PNG frames numbered from 0001).
inline void write_sequence(const Sequence& seq, const fs::path& dir) {
  fs::create_directories(dir / "img");
  for (std::size_t i = 0; i < seq.size(); ++i) write_image(dir / "img" / frame_file_name(i), seq.frame(i));
  write_boxes(dir / "groundtruth_rect.txt", seq.gt);
}

// ---------------------------------------------------------------------------
// Synthetic sequences

enum class ShapeKind { kRect, kEllipse };

struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t width = 320, height = 240;
  std::size_t n_frames = 60;
  ShapeKind shape = ShapeKind::kRect;
  double obj_w = 40, obj_h = 40;
  std::array<float, 3> color{0.9f, 0.15f, 0.1f};
  double start_x = 60, start_y = 80;  // top-left at frame 0
  double vx = 1.5, vy = 0.5;          // px / frame
  double wobble_amp = 0, wobble_period = 30;
  std::array<float, 3> background{0.15f, 0.2f, 0.35f};
  double noise_sigma = 0.0;
  std::size_t clutter = 0;  // same-colour distractor shapes
  bool occluder = false;
  BBox occluder_box{};
  std::size_t occluder_begin = 0, occluder_end = 0;  // frames [begin, end)
  std::array<float, 3> occluder_color{0.5f, 0.5f, 0.5f};
  std::uint64_t seed = 1;

  BBox box_at(std::size_t f) const {
    const double wob = wobble_amp != 0 ? wobble_amp * std::sin(2.0 * M_PI * f / wobble_period) : 0.0;
    const double x = start_x + vx * f;
    const double y = start_y + vy * f + wob;
    return BBox::from_xywh(x, y, obj_w, obj_h);
  }

  void validate() const {
    if (width == 0 || height == 0 || n_frames == 0) throw DataError("synthetic spec: empty resolution or length");
    if (!(obj_w > 0 && obj_h > 0)) throw DataError("synthetic spec: object size must be positive");
    if (occluder && !(occluder_begin < occluder_end)) throw DataError("synthetic spec: empty occluder span");
    const BBox frame{0, 0, static_cast<double>(width), static_cast<double>(height)};
    for (std::size_t f = 0; f < n_frames; ++f) {
      const BBox b = box_at(f);
      const double iw = std::max(0.0, std::min(b.x1, frame.x1) - std::max(b.x0, frame.x0));
      const double ih = std::max(0.0, std::min(b.y1, frame.y1) - std::max(b.y0, frame.y0));
      if (iw * ih < 0.5 * b.area()) {
        throw DataError("synthetic spec '" + name + "': object less than 50% inside the frame at frame " +
                        std::to_string(f));
      }
    }
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline bool covers(ShapeKind kind, const BBox& b, double px, double py) {
  if (px < b.x0 || px >= b.x1 || py < b.y0 || py >= b.y1) return false;
  if (kind == ShapeKind::kRect) return true;
  const double nx = (px - b.cx()) / (b.width() / 2), ny = (py - b.cy()) / (b.height() / 2);
  return nx * nx + ny * ny <= 1.0;
}

inline void paint(Image& im, ShapeKind kind, const BBox& b, const std::array<float, 3>& color) {
  const long h = static_cast<long>(image_height(im)), w = static_cast<long>(image_width(im));
  const std::size_t plane = static_cast<std::size_t>(h * w);
  const long y0 = std::max(0L, static_cast<long>(std::floor(b.y0))), y1 = std::min(h, static_cast<long>(std::ceil(b.y1)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(b.x0))), x1 = std::min(w, static_cast<long>(std::ceil(b.x1)));
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) {
      if (!covers(kind, b, x + 0.5, y + 0.5)) continue;
      const std::size_t i = static_cast<std::size_t>(y * w + x);
      for (std::size_t c = 0; c < 3; ++c) im[c * plane + i] = color[c];
    }
  }
}

}  // namespace detail

/// Renders synthetic frames on demand; frame f depends only on (spec, f).
class SyntheticFrames final : public FrameSource {
 public:
  explicit SyntheticFrames(SyntheticSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    place_clutter();
  }

  std::size_t size() const override { return spec_.n_frames; }
  const SyntheticSpec& spec() const { return spec_; }
  const std::vector<BBox>& clutter_boxes() const { return clutter_; }

 protected:
  Image decode(std::size_t f) const override {
    Image im(Shape{3, spec_.height, spec_.width});
    const std::size_t plane = spec_.height * spec_.width;
    for (std::size_t c = 0; c < 3; ++c) std::fill_n(im.ptr() + c * plane, plane, spec_.background[c]);
    for (const auto& b : clutter_) detail::paint(im, spec_.shape, b, spec_.color);
    detail::paint(im, spec_.shape, spec_.box_at(f), spec_.color);
    if (spec_.occluder && f >= spec_.occluder_begin && f < spec_.occluder_end) {
      detail::paint(im, ShapeKind::kRect, spec_.occluder_box, spec_.occluder_color);
    }
    if (spec_.noise_sigma > 0) {
      std::mt19937_64 rng(detail::splitmix64(spec_.seed ^ detail::splitmix64(f + 1)));
      std::normal_distribution<double> noise(0.0, spec_.noise_sigma);
      for (auto& v : im.data()) v = std::clamp(static_cast<float>(v + noise(rng)), 0.0f, 1.0f);
    }
    return im;
  }

 private:
  // Distractors are static and kept clear of the object's whole trajectory.
  void place_clutter() {
    if (spec_.clutter == 0) return;
    std::mt19937_64 rng(detail::splitmix64(spec_.seed));
    std::uniform_real_distribution<double> ux(0, spec_.width - spec_.obj_w), uy(0, spec_.height - spec_.obj_h);
    const double margin = std::max(spec_.obj_w, spec_.obj_h);
    for (int attempt = 0; attempt < 10000 && clutter_.size() < spec_.clutter; ++attempt) {
      const BBox cand = BBox::from_xywh(ux(rng), uy(rng), spec_.obj_w, spec_.obj_h);
      bool ok = true;
      for (std::size_t f = 0; f < spec_.n_frames && ok; ++f) {
        const BBox o = spec_.box_at(f);
        ok = std::abs(o.cx() - cand.cx()) > spec_.obj_w / 2 + margin ||
             std::abs(o.cy() - cand.cy()) > spec_.obj_h / 2 + margin;
      }
      for (const auto& c : clutter_) {
        ok = ok && iou(c, cand) == 0.0;
      }
      if (ok) clutter_.push_back(cand);
    }
    if (clutter_.size() < spec_.clutter) throw DataError("synthetic spec '" + spec_.name + "': no room for clutter");
  }

  SyntheticSpec spec_;
  std::vector<BBox> clutter_;
};

inline Sequence make_synthetic(const SyntheticSpec& spec) {
  auto frames = std::make_shared<SyntheticFrames>(spec);
  Sequence seq;
  seq.name = spec.name;
  seq.gt.reserve(spec.n_frames);
  for (std::size_t f = 0; f < spec.n_frames; ++f) seq.gt.push_back(spec.box_at(f));
  seq.frames = std::move(frames);
  return seq;
}

/// The five-sequence desk-scale set: three plain motions, one with a
/// ten-frame occluder and one with two same-colour distractors.
inline std::vector<SyntheticSpec> default_synthetic_specs(std::uint64_t seed = 7) {
  std::vector<SyntheticSpec> specs(5);
  specs[0].name = "syn_square";
  specs[0].color = {0.9f, 0.15f, 0.1f};
  specs[0].start_x = 50, specs[0].start_y = 90, specs[0].vx = 2.0, specs[0].vy = 0.5;

  specs[1].name = "syn_ellipse";
  specs[1].shape = ShapeKind::kEllipse;
  specs[1].obj_w = 36, specs[1].obj_h = 48;
  specs[1].color = {0.2f, 0.85f, 0.25f};
  specs[1].background = {0.3f, 0.1f, 0.3f};
  specs[1].start_x = 230, specs[1].start_y = 40, specs[1].vx = -1.5, specs[1].vy = 1.5;
  specs[1].wobble_amp = 6;

  specs[2].name = "syn_noisy";
  specs[2].obj_w = 52, specs[2].obj_h = 32;
  specs[2].color = {0.95f, 0.9f, 0.2f};
  specs[2].background = {0.2f, 0.25f, 0.2f};
  specs[2].start_x = 40, specs[2].start_y = 170, specs[2].vx = 2.5, specs[2].vy = -1.5;
  specs[2].noise_sigma = 0.05;

  specs[3].name = "syn_occluded";
  specs[3].obj_w = 38, specs[3].obj_h = 38;
  specs[3].color = {0.1f, 0.6f, 0.95f};
  specs[3].background = {0.35f, 0.3f, 0.2f};
  specs[3].start_x = 40, specs[3].start_y = 100, specs[3].vx = 3.0, specs[3].vy = 0.0;
  specs[3].occluder = true;
  specs[3].occluder_box = BBox::from_xywh(120, 60, 60, 120);
  specs[3].occluder_begin = 20, specs[3].occluder_end = 30;

  specs[4].name = "syn_clutter";
  specs[4].obj_w = 40, specs[4].obj_h = 40;
  specs[4].color = {0.95f, 0.5f, 0.1f};
  specs[4].background = {0.1f, 0.15f, 0.25f};
  specs[4].start_x = 140, specs[4].start_y = 20, specs[4].vx = 0.5, specs[4].vy = 2.0;
  specs[4].clutter = 2;

  for (std::size_t i = 0; i < specs.size(); ++i) specs[i].seed = detail::splitmix64(seed + i);
  return specs;
}

}  // namespace ssfc
