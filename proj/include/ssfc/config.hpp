#pragma once

// Line-oriented `key = value` configuration. `#` starts a comment and
// `[name]` opens a section (used by synthetic sequence files).

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssfc/tracker.hpp"
#include "ssfc/training.hpp"

namespace ssfc {

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what) : Error(what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ConfigEntry {
  std::string key, value;
  std::size_t line = 0;
};

struct ConfigSection {
  std::string name;  // empty for the leading unnamed section
  std::vector<ConfigEntry> entries;
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<ConfigSection> parse_config_text(const std::string& text, const std::string& source = "config") {
  std::vector<ConfigSection> sections(1);
  std::istringstream in(text);
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("", source + ":" + std::to_string(n) + ": malformed section header");
      }
      sections.push_back({trim(line.substr(1, line.size() - 2)), {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", source + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("", source + ":" + std::to_string(n) + ": empty key");
    sections.back().entries.push_back({key, trim(line.substr(eq + 1)), n});
  }
  return sections;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

namespace detail {

inline double to_double(const ConfigEntry& e) {
  double v = 0;
  auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc() || p != e.value.data() + e.value.size() || !std::isfinite(v)) {
    throw ConfigError(e.key, "config key '" + e.key + "': expected a number, got '" + e.value + "'");
  }
  return v;
}

inline std::uint64_t to_uint(const ConfigEntry& e) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc() || p != e.value.data() + e.value.size()) {
    throw ConfigError(e.key, "config key '" + e.key + "': expected a non-negative integer, got '" + e.value + "'");
  }
  return v;
}

inline std::vector<double> to_list(const ConfigEntry& e, std::size_t n) {
  std::vector<double> out;
  std::stringstream ss(e.value);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_double({e.key, trim(tok), e.line}));
  if (out.size() != n) {
    throw ConfigError(e.key, "config key '" + e.key + "': expected " + std::to_string(n) + " comma-separated values");
  }
  return out;
}

inline std::array<float, 3> to_color(const ConfigEntry& e) {
  const auto v = to_list(e, 3);
  for (double c : v)
    if (c < 0 || c > 1) throw ConfigError(e.key, "config key '" + e.key + "': colour components must be in [0, 1]");
  return {static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic sequence specs

inline void apply_synthetic_key(SyntheticSpec& s, const ConfigEntry& e) {
  using namespace detail;
  const std::string& k = e.key;
  if (k == "name") s.name = e.value;
  else if (k == "width") s.width = to_uint(e);
  else if (k == "height") s.height = to_uint(e);
  else if (k == "n_frames") s.n_frames = to_uint(e);
  else if (k == "shape") {
    if (e.value == "rect") s.shape = ShapeKind::kRect;
    else if (e.value == "ellipse") s.shape = ShapeKind::kEllipse;
    else throw ConfigError(k, "config key 'shape': expected rect or ellipse");
  } else if (k == "obj_w") s.obj_w = to_double(e);
  else if (k == "obj_h") s.obj_h = to_double(e);
  else if (k == "color") s.color = to_color(e);
  else if (k == "start_x") s.start_x = to_double(e);
  else if (k == "start_y") s.start_y = to_double(e);
  else if (k == "vx") s.vx = to_double(e);
  else if (k == "vy") s.vy = to_double(e);
  else if (k == "wobble_amp") s.wobble_amp = to_double(e);
  else if (k == "wobble_period") s.wobble_period = to_double(e);
  else if (k == "background") s.background = to_color(e);
  else if (k == "noise_sigma") s.noise_sigma = to_double(e);
  else if (k == "clutter") s.clutter = to_uint(e);
  else if (k == "occluder") {
    const auto v = to_list(e, 4);
    s.occluder = true;
    s.occluder_box = BBox::from_xywh(v[0], v[1], v[2], v[3]);
  } else if (k == "occluder_frames") {
    const auto v = to_list(e, 2);
    s.occluder_begin = static_cast<std::size_t>(v[0]);
    s.occluder_end = static_cast<std::size_t>(v[1]);
  } else if (k == "occluder_color") s.occluder_color = to_color(e);
  else if (k == "seed") s.seed = to_uint(e);
  else throw ConfigError(k, "unknown synthetic key '" + k + "'");
}

/// Keys before the first section are shared defaults; each [name] section is
/// one sequence. Without sections the file describes a single sequence.
inline std::vector<SyntheticSpec> parse_synthetic_specs(const std::string& text, const std::string& source = "spec") {
  const auto sections = parse_config_text(text, source);
  SyntheticSpec base;
  for (const auto& e : sections[0].entries) apply_synthetic_key(base, e);
  std::vector<SyntheticSpec> specs;
  for (std::size_t i = 1; i < sections.size(); ++i) {
    SyntheticSpec s = base;
    s.name = sections[i].name;
    s.seed = detail::splitmix64(base.seed + i);
    for (const auto& e : sections[i].entries) apply_synthetic_key(s, e);
    specs.push_back(s);
  }
  if (specs.empty()) specs.push_back(base);
  for (const auto& s : specs) s.validate();
  return specs;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  TrainConfig train;
  TrackerConfig tracker;
  IFConfig neuron;
  std::uint64_t synthetic_seed = 7;  // seed for `synthetic:default`
};

struct ConfigKey {
  const char* key;
  const char* doc;
  std::function<void(RunConfig&, const ConfigEntry&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& run_config_keys() {
  using namespace detail;
  using R = RunConfig;
  using E = ConfigEntry;
  auto num = [](double v) { return format_number(v); };
  static const std::vector<ConfigKey> keys = {
      {"T", "time steps per frame", [](R& c, const E& e) { c.train.T = to_uint(e); },
       [](const R& c) { return std::to_string(c.train.T); }},
      {"batch_size", "pairs per SGD step", [](R& c, const E& e) { c.train.batch_size = to_uint(e); },
       [](const R& c) { return std::to_string(c.train.batch_size); }},
      {"lr", "SGD learning rate", [](R& c, const E& e) { c.train.lr = to_double(e); },
       [num](const R& c) { return num(c.train.lr); }},
      {"max_epoch", "training epochs", [](R& c, const E& e) { c.train.max_epoch = to_uint(e); },
       [](const R& c) { return std::to_string(c.train.max_epoch); }},
      {"iters_per_epoch", "SGD steps per epoch", [](R& c, const E& e) { c.train.iters_per_epoch = to_uint(e); },
       [](const R& c) { return std::to_string(c.train.iters_per_epoch); }},
      {"quality", "quality target: pss or iou",
       [](R& c, const E& e) {
         try {
           c.train.quality_kind = parse_quality_kind(e.value);
         } catch (const Error& err) {
           throw ConfigError(e.key, err.what());
         }
       },
       [](const R& c) { return to_string(c.train.quality_kind); }},
      {"focal_gamma", "focal loss gamma", [](R& c, const E& e) { c.train.focal_gamma = to_double(e); },
       [num](const R& c) { return num(c.train.focal_gamma); }},
      {"focal_alpha", "focal loss alpha", [](R& c, const E& e) { c.train.focal_alpha = to_double(e); },
       [num](const R& c) { return num(c.train.focal_alpha); }},
      {"reg_loss", "regression loss: 1-iou or -ln-iou",
       [](R& c, const E& e) {
         if (e.value == "1-iou") c.train.reg_form = RegLossForm::kOneMinusIoU;
         else if (e.value == "-ln-iou") c.train.reg_form = RegLossForm::kNegLogIoU;
         else throw ConfigError(e.key, "config key 'reg_loss': expected 1-iou or -ln-iou");
       },
       [](const R& c) { return std::string(c.train.reg_form == RegLossForm::kOneMinusIoU ? "1-iou" : "-ln-iou"); }},
      {"seed", "RNG seed for init and sampling", [](R& c, const E& e) { c.train.seed = to_uint(e); },
       [](const R& c) { return std::to_string(c.train.seed); }},
      {"max_gap", "max frames between template and search", [](R& c, const E& e) { c.train.max_gap = to_uint(e); },
       [](const R& c) { return std::to_string(c.train.max_gap); }},
      {"jitter", "search-centre jitter (crop px)", [](R& c, const E& e) { c.train.jitter = to_double(e); },
       [num](const R& c) { return num(c.train.jitter); }},
      {"rate_target", "backbone init firing rate (0 = plain init)",
       [](R& c, const E& e) { c.train.rate_target = to_double(e); },
       [num](const R& c) { return num(c.train.rate_target); }},
      {"cls_prior", "initial cls probability", [](R& c, const E& e) { c.train.cls_prior = to_double(e); },
       [num](const R& c) { return num(c.train.cls_prior); }},
      {"reg_prior", "initial regressed offset (crop px)", [](R& c, const E& e) { c.train.reg_prior = to_double(e); },
       [num](const R& c) { return num(c.train.reg_prior); }},
      {"window_weight", "cosine window weight", [](R& c, const E& e) { c.tracker.window_weight = to_double(e); },
       [num](const R& c) { return num(c.tracker.window_weight); }},
      {"size_lerp", "box size interpolation", [](R& c, const E& e) { c.tracker.size_lerp = to_double(e); },
       [num](const R& c) { return num(c.tracker.size_lerp); }},
      {"min_size", "smallest tracked box side (px)", [](R& c, const E& e) { c.tracker.min_size = to_double(e); },
       [num](const R& c) { return num(c.tracker.min_size); }},
      {"v_threshold", "IF firing threshold", [](R& c, const E& e) { c.neuron.v_threshold = to_double(e); },
       [num](const R& c) { return num(c.neuron.v_threshold); }},
      {"v_reset", "IF reset potential", [](R& c, const E& e) { c.neuron.v_reset = to_double(e); },
       [num](const R& c) { return num(c.neuron.v_reset); }},
      {"surrogate_alpha", "softsign surrogate sharpness",
       [](R& c, const E& e) { c.neuron.surrogate_alpha = to_double(e); },
       [num](const R& c) { return num(c.neuron.surrogate_alpha); }},
      {"synthetic_seed", "seed of the built-in synthetic set",
       [](R& c, const E& e) { c.synthetic_seed = to_uint(e); },
       [](const R& c) { return std::to_string(c.synthetic_seed); }},
  };
  return keys;
}

inline void apply_run_key(RunConfig& c, const ConfigEntry& e) {
  for (const auto& k : run_config_keys()) {
    if (e.key == k.key) {
      k.set(c, e);
      return;
    }
  }
  throw ConfigError(e.key, "unknown config key '" + e.key + "'");
}

inline void validate(const RunConfig& c) {
  auto wrap = [](const char* key, auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key, e.what());
    }
  };
  wrap("train", [&] { c.train.validate(); });
  wrap("tracker", [&] { c.tracker.validate(); });
  wrap("neuron", [&] { c.neuron.validate(); });
}

inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}, const std::string& source = "config") {
  const auto sections = parse_config_text(text, source);
  if (sections.size() > 1) throw ConfigError(sections[1].name, source + ": sections are not allowed in a run config");
  for (const auto& e : sections[0].entries) apply_run_key(base, e);
  validate(base);
  return base;
}

/// Every key with its current value and description, in file syntax.
inline std::string dump_run_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : run_config_keys()) out += std::string(k.key) + " = " + k.get(c) + "  # " + k.doc + "\n";
  return out;
}

}  // namespace ssfc
