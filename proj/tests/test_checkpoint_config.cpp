#include <gtest/gtest.h>

#include <fstream>

#include "ssfc/checkpoint.hpp"
#include "ssfc/config.hpp"
#include "test_util.hpp"

using namespace ssfc;
using namespace ssfc::testing;

namespace {

SiameseModel<float> small_model(std::uint64_t seed = 5) {
  ModelConfig mc;
  mc.time_steps = 3;
  mc.quality_kind = QualityKind::kIoU;
  mc.if_config.v_threshold = 0.75;
  return SiameseModel<float>(mc, seed);
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void put_bytes(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

CheckpointError::Kind load_error(const std::filesystem::path& p) {
  try {
    load_checkpoint(p.string());
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return CheckpointError::Kind::kIO;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  auto model = small_model();
  const auto dir = temp_dir("ckpt_roundtrip");
  const auto path = (dir / "m.ssfc").string();
  save_checkpoint(path, make_checkpoint(model, {{"epoch", "3"}, {"seed", "5"}}));
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.get("epoch"), "3");
  EXPECT_EQ(ck.get("T"), "3");
  EXPECT_EQ(ck.get("quality_kind"), "iou");
  auto back = model_from_checkpoint<float>(ck);
  EXPECT_EQ(back.config().time_steps, 3u);
  EXPECT_EQ(back.config().quality_kind, QualityKind::kIoU);
  EXPECT_EQ(back.config().if_config.v_threshold, 0.75);
  auto a = model.named_parameters(), b = back.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.value(), b[i].second.value()) << a[i].first;
  }
  // Saving the reloaded model reproduces the file byte for byte.
  save_checkpoint((dir / "again.ssfc").string(), make_checkpoint(back, {{"epoch", "3"}, {"seed", "5"}}));
  EXPECT_EQ(file_bytes(path), file_bytes(dir / "again.ssfc"));
}

TEST(Checkpoint, DoublePrecisionRecords) {
  std::mt19937_64 rng(1);
  const TensorD t = random_tensor({3, 4}, rng);
  Checkpoint ck;
  ck.arrays.push_back(to_record("x", t));
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(ck));
  EXPECT_EQ(from_record<double>(*back.find("x")), t);
  EXPECT_EQ(from_record<float>(*back.find("x")), t.cast<float>());
}

TEST(Checkpoint, TruncatedOrFlippedIsCorrupt) {
  auto model = small_model();
  const auto dir = temp_dir("ckpt_corrupt");
  save_checkpoint((dir / "m.ssfc").string(), make_checkpoint(model));
  const std::string good = file_bytes(dir / "m.ssfc");
  for (std::size_t cut : {std::size_t{3}, std::size_t{40}, good.size() / 2, good.size() - 1}) {
    put_bytes(dir / "t.ssfc", good.substr(0, cut));
    EXPECT_EQ(load_error(dir / "t.ssfc"), CheckpointError::Kind::kCorrupt) << cut;
  }
  std::string flipped = good;
  flipped[good.size() - 1000] ^= 0x10;
  put_bytes(dir / "f.ssfc", flipped);
  EXPECT_EQ(load_error(dir / "f.ssfc"), CheckpointError::Kind::kCorrupt);
  std::string magic = good;
  magic[0] = 'X';
  put_bytes(dir / "g.ssfc", magic);
  EXPECT_EQ(load_error(dir / "g.ssfc"), CheckpointError::Kind::kCorrupt);
  EXPECT_EQ(load_error(dir / "missing.ssfc"), CheckpointError::Kind::kIO);
}

TEST(Checkpoint, VersionMismatch) {
  auto model = small_model();
  std::string bytes = serialize_checkpoint(make_checkpoint(model));
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(bytes.data() + 4, &v, 4);
  try {
    parse_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kVersion);
  }
}

TEST(Checkpoint, MissingArraysListedByName) {
  auto model = small_model();
  Checkpoint ck = make_checkpoint(model);
  std::vector<std::string> removed;
  for (auto it = ck.arrays.begin(); it != ck.arrays.end();) {
    if (it->name.rfind("proj.", 0) == 0 && it->name.find("bias") != std::string::npos) {
      removed.push_back(it->name);
      it = ck.arrays.erase(it);
    } else {
      ++it;
    }
  }
  ASSERT_EQ(removed.size(), 3u);
  ck.arrays[0].shape = Shape{1, 2, 3};
  const std::string first = ck.arrays[0].name;
  ck.arrays[0].bytes.resize(6 * 4);
  try {
    model_from_checkpoint<float>(parse_checkpoint(serialize_checkpoint(ck)));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kArchitecture);
    const std::string m = e.what();
    for (const auto& n : removed) EXPECT_NE(m.find(n), std::string::npos) << m;
    EXPECT_NE(m.find(first), std::string::npos) << m;
  }
}

TEST(Checkpoint, BadMetadataIsCorrupt) {
  auto model = small_model();
  Checkpoint ck = make_checkpoint(model);
  ck.meta["T"] = "six";
  try {
    model_from_checkpoint<float>(ck);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kCorrupt);
  }
  ck = make_checkpoint(model);
  ck.meta.erase("quality_kind");
  EXPECT_THROW(model_from_checkpoint<float>(ck), CheckpointError);
}

TEST(Config, DefaultsMatchTrainingTable) {
  const RunConfig c;
  EXPECT_EQ(c.train.T, 6u);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.train.max_epoch, 20u);
  EXPECT_EQ(c.neuron.v_threshold, 1.0);
  EXPECT_EQ(c.tracker.window_weight, 0.3);
  EXPECT_EQ(c.tracker.size_lerp, 0.3);
}

TEST(Config, ParseOverridesAndComments) {
  const auto c = parse_run_config("# comment\nT = 4\nlr=0.05  # trailing\n\nquality = iou\nreg_loss = -ln-iou\n");
  EXPECT_EQ(c.train.T, 4u);
  EXPECT_EQ(c.train.lr, 0.05);
  EXPECT_EQ(c.train.quality_kind, QualityKind::kIoU);
  EXPECT_EQ(c.train.reg_form, RegLossForm::kNegLogIoU);
  EXPECT_EQ(c.train.batch_size, 16u);
}

TEST(Config, UnknownKeyNamesIt) {
  try {
    parse_run_config("T = 6\nlearning_rate = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "learning_rate");
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(Config, BadValuesAndValidation) {
  EXPECT_THROW(parse_run_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_run_config("T = -1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("T = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("window_weight = 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config("quality = centerness\n"), ConfigError);
  EXPECT_THROW(parse_run_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[section]\nT = 1\n"), ConfigError);
}

TEST(Config, DumpParsesBackToSameValues) {
  RunConfig c;
  c.train.lr = 0.123;
  c.train.seed = 99;
  c.tracker.min_size = 7;
  c.neuron.surrogate_alpha = 3.5;
  const RunConfig back = parse_run_config(dump_run_config(c));
  EXPECT_EQ(dump_run_config(back), dump_run_config(c));
  EXPECT_EQ(run_config_keys().size(), 22u);
}

TEST(Config, SyntheticSpecSections) {
  const auto specs = parse_synthetic_specs(
      "n_frames = 20\nwidth = 200\n[a]\nvx = 1\n[b]\nshape = ellipse\ncolor = 0.1, 0.2, 0.3\n"
      "occluder = 10,10,20,20\noccluder_frames = 5, 8\n");
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[0].name, "a");
  EXPECT_EQ(specs[0].n_frames, 20u);
  EXPECT_EQ(specs[0].vx, 1.0);
  EXPECT_EQ(specs[1].shape, ShapeKind::kEllipse);
  EXPECT_FLOAT_EQ(specs[1].color[2], 0.3f);
  EXPECT_TRUE(specs[1].occluder);
  EXPECT_EQ(specs[1].occluder_end, 8u);
  EXPECT_NE(specs[0].seed, specs[1].seed);
  EXPECT_THROW(parse_synthetic_specs("speed = 3\n"), ConfigError);
  EXPECT_THROW(parse_synthetic_specs("color = 2,0,0\n"), ConfigError);
  EXPECT_THROW(parse_synthetic_specs("start_x = 300\nvx = 5\n"), DataError);
}
