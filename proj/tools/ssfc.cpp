// ssfc: train, track, evaluate and inspect the spiking Siamese tracker.
//
// Exit codes: 0 ok, 2 usage/config, 3 numeric failure, 4 checkpoint,
// 5 data mismatch, 6 corrupt file.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssfc/config.hpp"
#include "ssfc/metrics.hpp"
#include "ssfc/tracker.hpp"
#include "ssfc/training.hpp"

namespace fs = std::filesystem;
using namespace ssfc;

namespace {

enum Exit { kOk = 0, kFail = 1, kUsage = 2, kNumeric = 3, kCheckpoint = 4, kData = 5, kCorrupt = 6 };

struct UsageError : Error {
  using Error::Error;
};

bool is_sequence_dir(const fs::path& p) { return fs::is_directory(p / "img"); }

std::vector<fs::path> sequence_dirs(const fs::path& root) {
  if (is_sequence_dir(root)) return {root};
  std::vector<fs::path> out;
  if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && is_sequence_dir(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// `dir` (one sequence or a directory of them), `synthetic:default` or
/// `synthetic:<specfile>`.
std::vector<Sequence> load_dataset(const std::string& spec, std::uint64_t synthetic_seed) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    const std::string rest = spec.substr(prefix.size());
    std::vector<SyntheticSpec> specs;
    if (rest == "default" || rest.empty()) {
      specs = default_synthetic_specs(synthetic_seed);
    } else {
      specs = parse_synthetic_specs(read_text_file(rest), rest);
    }
    std::vector<Sequence> out;
    for (const auto& s : specs) out.push_back(make_synthetic(s));
    return out;
  }
  const auto dirs = sequence_dirs(spec);
  if (dirs.empty()) throw DataError("no sequences found under " + spec);
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) cfg = parse_run_config(read_text_file(path), cfg, path);
  std::string text;
  for (const auto& o : overrides) text += o + "\n";
  return parse_run_config(text, cfg, "--set");
}

TrackerConfig tracker_config_from(const Checkpoint& ck, TrackerConfig cfg) {
  auto num = [&](const char* key, double& field) {
    auto it = ck.meta.find(key);
    if (it != ck.meta.end()) field = std::stod(it->second);
  };
  num("window_weight", cfg.window_weight);
  num("size_lerp", cfg.size_lerp);
  return cfg;
}

std::map<std::string, std::string> tracker_metadata(const TrackerConfig& t) {
  return {{"window_weight", format_number(t.window_weight)}, {"size_lerp", format_number(t.size_lerp)}};
}

std::optional<BBox> parse_init_box(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_xywh(s, 1, "--init-box");
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, quality, run_dir;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, iters;
};

int cmd_train(const TrainArgs& a) {
  if (a.data.empty() || a.out.empty()) throw UsageError("train: --data and --out are required");
  RunConfig cfg = load_run_config(a.config, a.set);
  if (!a.quality.empty()) {
    try {
      cfg.train.quality_kind = parse_quality_kind(a.quality);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.max_epoch = *a.epochs;
  if (a.iters) cfg.train.iters_per_epoch = *a.iters;
  validate(cfg);

  const auto data = load_dataset(a.data, cfg.synthetic_seed);
  const fs::path out(a.out);
  const fs::path run_dir = a.run_dir.empty() ? (out.has_parent_path() ? out.parent_path() : fs::path(".")) : fs::path(a.run_dir);
  std::printf("training on %zu sequences, quality=%s, T=%zu, batch=%zu, lr=%g, %zu epochs x %zu iterations\n",
              data.size(), to_string(cfg.train.quality_kind).c_str(), cfg.train.T, cfg.train.batch_size, cfg.train.lr,
              cfg.train.max_epoch, cfg.train.iters_per_epoch);
  std::fflush(stdout);
  const auto t0 = std::chrono::steady_clock::now();
  auto model = init_model<Real>(cfg.train, data, cfg.neuron);
  run_training(model, data, cfg.train, run_dir, out, tracker_metadata(cfg.tracker), [&](const MetricsRow& m) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %3zu  iou %.4f  cls %.4f  quality %.4f  reg %.4f  (%.0fs)\n", m.epoch, m.iou, m.cls_loss,
                m.quality_loss, m.reg_loss, secs);
    std::fflush(stdout);
  });
  std::printf("wrote %s and %s\n", out.string().c_str(), (run_dir / "metrics.csv").string().c_str());
  return kOk;
}

struct InitArgs {
  std::string config, data, out, quality;
  std::vector<std::string> set;
};

int cmd_init(const InitArgs& a) {
  if (a.out.empty()) throw UsageError("init: --out is required");
  RunConfig cfg = load_run_config(a.config, a.set);
  if (!a.quality.empty()) cfg.train.quality_kind = parse_quality_kind(a.quality);
  const std::vector<Sequence> data = a.data.empty() ? std::vector<Sequence>{} : load_dataset(a.data, cfg.synthetic_seed);
  auto model = init_model<Real>(cfg.train, data, cfg.neuron);
  auto meta = train_metadata(cfg.train);
  auto tm = tracker_metadata(cfg.tracker);
  meta.insert(tm.begin(), tm.end());
  meta["epoch"] = "0";
  save_checkpoint(a.out, make_checkpoint(model, meta));
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

struct TrackArgs {
  std::string ckpt, seq, init_box, out, render;
  std::optional<double> window_weight, size_lerp;
};

int cmd_track(const TrackArgs& a) {
  if (a.ckpt.empty() || a.seq.empty() || a.out.empty()) throw UsageError("track: --ckpt, --seq and --out are required");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto model = model_from_checkpoint<Real>(ck);
  TrackerConfig tc = tracker_config_from(ck, {});
  if (a.window_weight) tc.window_weight = *a.window_weight;
  if (a.size_lerp) tc.size_lerp = *a.size_lerp;
  try {
    tc.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto init = parse_init_box(a.init_box);

  const auto dirs = sequence_dirs(a.seq);
  if (dirs.empty()) throw DataError("no sequence found at " + a.seq);
  const bool multi = dirs.size() > 1 || !is_sequence_dir(a.seq);
  if (multi && init) throw UsageError("track: --init-box applies to a single sequence");
  for (const auto& d : dirs) {
    const Sequence seq = load_sequence(d, init);
    const fs::path render_dir = a.render.empty() ? fs::path() : (multi ? fs::path(a.render) / seq.name : fs::path(a.render));
    const auto boxes = track_sequence(seq, model, tc, render_dir);
    const fs::path out = multi ? fs::path(a.out) / (seq.name + ".txt") : fs::path(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_boxes(out, boxes);
    std::string summary;
    if (seq.fully_annotated()) {
      const auto e = evaluate_sequence(seq.name, boxes, seq.gt);
      char buf[128];
      std::snprintf(buf, sizeof buf, "  prec@20px %.4f  auc %.4f  mean_iou %.4f", e.precision_at_20, e.success_auc,
                    e.mean_iou);
      summary = buf;
    }
    std::printf("%s: %zu frames -> %s%s\n", seq.name.c_str(), boxes.size(), out.string().c_str(), summary.c_str());
  }
  return kOk;
}

struct EvalArgs {
  std::string results, gt, out;
};

fs::path gt_file_for(const fs::path& gt_root, const std::string& name) {
  if (fs::exists(gt_root / "groundtruth_rect.txt")) return gt_root / "groundtruth_rect.txt";
  if (fs::exists(gt_root / name / "groundtruth_rect.txt")) return gt_root / name / "groundtruth_rect.txt";
  if (fs::is_regular_file(gt_root)) return gt_root;
  throw DataError(name + ": no ground truth under " + gt_root.string());
}

int cmd_eval(const EvalArgs& a) {
  if (a.results.empty() || a.gt.empty() || a.out.empty()) throw UsageError("eval: --results, --gt and --out are required");
  std::vector<fs::path> files;
  if (fs::is_directory(a.results)) {
    for (const auto& e : fs::directory_iterator(a.results))
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(a.results)) {
    files.push_back(a.results);
  } else {
    throw DataError("results not found: " + a.results);
  }
  if (files.empty()) throw DataError("no result files in " + a.results);
  std::vector<SequenceEval> seqs;
  for (const auto& f : files) {
    const std::string name = f.stem().string();
    const auto preds = read_boxes(f);
    const auto gts = read_boxes(gt_file_for(a.gt, name));
    if (preds.size() != gts.size()) {
      throw DataError(name + ": " + std::to_string(preds.size()) + " result lines vs " + std::to_string(gts.size()) +
                      " ground-truth lines");
    }
    if (preds.empty()) throw DataError(name + ": empty results");
    seqs.push_back(evaluate_sequence(name, preds, gts));
  }
  const EvalReport report = make_report(std::move(seqs));
  write_report(report, a.out);
  std::cout << report.to_text();
  return kOk;
}

struct InspectArgs {
  std::string ckpt;
  bool verify = false;
};

constexpr std::array<std::size_t, 5> kReferenceCounts{34944, 307456, 885120, 663936, 442624};

std::string with_commas(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

int cmd_inspect(const InspectArgs& a) {
  if (a.ckpt.empty()) throw UsageError("inspect: --ckpt is required");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto model = model_from_checkpoint<Real>(ck);
  std::printf("checkpoint %s (format v%u)\n", a.ckpt.c_str(), kCheckpointVersion);
  for (const auto& [k, v] : ck.meta) std::printf("  %s = %s\n", k.c_str(), v.c_str());

  const auto counts = model.backbone().count_parameters();
  std::printf("\nbackbone layers\n");
  std::size_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto& l = model.backbone().layers()[i];
    std::printf("  %-6s weight %-20s bias %-8s params %s\n", l.name.c_str(), to_string(l.weight.shape()).c_str(),
                to_string(l.bias.shape()).c_str(), with_commas(counts[i]).c_str());
    total += counts[i];
  }
  std::printf("  total  %s\n", with_commas(total).c_str());

  NoGradGuard no_grad;
  std::vector<TraceEntry> zt, xt;
  const auto z = model.backbone().extract(Var<Real>::constant(Tensor<Real>(Shape{1, 3, kTemplateSize, kTemplateSize})),
                                          model.config().time_steps, &zt);
  const auto x = model.backbone().extract(Var<Real>::constant(Tensor<Real>(Shape{1, 3, kSearchSize, kSearchSize})),
                                          model.config().time_steps, &xt);
  const auto maps = model.forward(z, x);
  std::printf("\nshape trace (template | search)\n");
  for (std::size_t i = 0; i < zt.size(); ++i) {
    std::printf("  %-10s %-24s %-24s\n", zt[i].layer.c_str(), to_string(zt[i].shape).c_str(),
                to_string(xt[i].shape).c_str());
  }
  std::printf("  %-10s %s\n", "cls", to_string(maps.cls.shape()).c_str());
  std::printf("  %-10s %s\n", "quality", to_string(maps.quality.shape()).c_str());
  std::printf("  %-10s %s\n", "reg", to_string(maps.reg.shape()).c_str());

  if (!a.verify) return kOk;
  bool ok = true;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] != kReferenceCounts[i]) {
      std::printf("MISMATCH conv%zu: %zu parameters, expected %zu\n", i + 1, counts[i], kReferenceCounts[i]);
      ok = false;
    }
  }
  const Shape zf{1, 256, 6, 6}, xf{1, 256, 28, 28}, sm{1, 1, 17, 17};
  if (z.rates.shape() != zf || x.rates.shape() != xf || maps.cls.shape() != sm || maps.quality.shape() != sm ||
      maps.reg.shape() != Shape{1, 4, 17, 17}) {
    std::printf("MISMATCH feature or score-map shapes\n");
    ok = false;
  }
  std::printf("\nparameter counts and shapes: %s\n", ok ? "OK" : "MISMATCH");
  return ok ? kOk : kCheckpoint;
}

struct SynthArgs {
  std::string spec = "default", out;
  std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  if (a.out.empty()) throw UsageError("synth: --out is required");
  const auto data = load_dataset("synthetic:" + a.spec, a.seed);
  for (const auto& s : data) {
    write_sequence(s, fs::path(a.out) / s.name);
    std::printf("wrote %s (%zu frames)\n", (fs::path(a.out) / s.name).string().c_str(), s.size());
  }
  return kOk;
}

int cmd_config(const std::string& path, const std::vector<std::string>& set) {
  std::cout << dump_run_config(load_run_config(path, set));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking Siamese tracker: train, track, evaluate, inspect"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", ta.config, "key = value run config file");
  train->add_option("--data", ta.data, "sequence dir, dataset dir, synthetic:default or synthetic:<specfile>");
  train->add_option("--out", ta.out, "final checkpoint path");
  train->add_option("--quality", ta.quality, "quality target: pss or iou");
  train->add_option("--run-dir", ta.run_dir, "metrics.csv and per-epoch checkpoints (default: --out's directory)");
  train->add_option("--seed", ta.seed, "RNG seed");
  train->add_option("--epochs", ta.epochs, "max_epoch override");
  train->add_option("--iters", ta.iters, "iters_per_epoch override");
  train->add_option("--set", ta.set, "key=value override, repeatable");

  InitArgs ia;
  auto* init = app.add_subcommand("init", "write a freshly initialised checkpoint");
  init->add_option("--config", ia.config, "run config file");
  init->add_option("--data", ia.data, "data used to balance the initial firing rates");
  init->add_option("--out", ia.out, "checkpoint path");
  init->add_option("--quality", ia.quality, "quality target: pss or iou");
  init->add_option("--set", ia.set, "key=value override, repeatable");

  TrackArgs tk;
  auto* track = app.add_subcommand("track", "track a sequence (or a directory of sequences)");
  track->add_option("--ckpt", tk.ckpt, "checkpoint");
  track->add_option("--seq", tk.seq, "sequence directory (img/ + groundtruth_rect.txt) or a directory of them");
  track->add_option("--init-box", tk.init_box, "x,y,w,h of the target in frame 0");
  track->add_option("--out", tk.out, "results file (directory for several sequences)");
  track->add_option("--render", tk.render, "write annotated frames here");
  track->add_option("--window-weight", tk.window_weight, "cosine window weight");
  track->add_option("--size-lerp", tk.size_lerp, "box size interpolation");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "precision / success evaluation");
  eval->add_option("--results", ea.results, "results file or directory of <sequence>.txt");
  eval->add_option("--gt", ea.gt, "sequence directory or directory of sequences");
  eval->add_option("--out", ea.out, "report directory");

  InspectArgs na;
  auto* inspect = app.add_subcommand("inspect", "print layer shapes and parameter counts");
  inspect->add_option("--ckpt", na.ckpt, "checkpoint");
  inspect->add_flag("--verify-table1", na.verify, "fail unless the per-layer parameter counts match the reference");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write synthetic sequences in OTB layout");
  synth->add_option("--spec", sa.spec, "default or a synthetic spec file");
  synth->add_option("--out", sa.out, "output directory");
  synth->add_option("--seed", sa.seed, "seed for the default set");

  std::string cfg_path;
  std::vector<std::string> cfg_set;
  auto* config = app.add_subcommand("config", "print every config key with its effective value");
  config->add_option("--config", cfg_path, "run config file");
  config->add_option("--set", cfg_set, "key=value override, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*init) return cmd_init(ia);
    if (*track) return cmd_track(tk);
    if (*eval) return cmd_eval(ea);
    if (*inspect) return cmd_inspect(na);
    if (*synth) return cmd_synth(sa);
    if (*config) return cmd_config(cfg_path, cfg_set);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error (key '%s'): %s\n", e.key().c_str(), e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return e.kind() == CheckpointError::Kind::kCorrupt ? kCorrupt : kCheckpoint;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFail;
  }
  return kUsage;
}
