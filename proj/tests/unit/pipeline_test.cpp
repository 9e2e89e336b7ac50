#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bvr/checkpoint.hpp"
#include "bvr/cli.hpp"
#include "bvr/config.hpp"
#include "bvr/error.hpp"
#include "bvr/evaluate.hpp"
#include "bvr/training.hpp"
#include "fixtures.hpp"

namespace bvr {
namespace {

using testing::TempDir;
using testing::tiny_run_config;

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

template <typename F>
std::string reason_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.reason();
  }
  return "";
}

TEST(RunConfig, PublishedDefaults) {
  const RunConfig c = preset("default");
  EXPECT_EQ(c.dac_train.optimizer.name, "adamw");
  EXPECT_EQ(c.dac_train.optimizer.lr, 5e-5);
  EXPECT_EQ(c.dac_train.batch_clips, 2);
  EXPECT_EQ(c.cfc_train.optimizer.name, "adam");
  EXPECT_EQ(c.cfc_train.optimizer.lr, 1e-4);
  EXPECT_EQ(c.cfc_train.batch_clips, 4);
  EXPECT_EQ(c.cfc_train.completion_lr, 1e-5);
  EXPECT_EQ(c.n_local, 5);
  EXPECT_EQ(c.n_nonlocal, 3);
  const RunConfig p = preset("paper_scale");
  EXPECT_EQ(p.model.height, 240);
  EXPECT_EQ(p.model.width, 432);
  EXPECT_TRUE(p.cfc_train.freeze_recovery_head);
}

TEST(RunConfig, PresetsValidateAndRoundTrip) {
  for (const auto& name : preset_names()) {
    const RunConfig c = preset(name);
    EXPECT_NO_THROW(c.validate()) << name;
    const std::string text = format_run_config(c);
    EXPECT_EQ(format_run_config(parse_run_config(text)), text) << name;
  }
  EXPECT_THROW(preset("huge"), InvalidArgument);
}

TEST(RunConfig, ShippedFilesMatchPresets) {
  for (const auto& name : preset_names()) {
    const RunConfig c = load_run_config(std::filesystem::path(BVR_CONFIG_DIR) / (name + ".json"));
    EXPECT_EQ(format_run_config(c), format_run_config(preset(name))) << name;
  }
}

TEST(RunConfig, StrictParsing) {
  EXPECT_THROW(parse_run_config(R"({"schema_version":1,"model":{"bogus":1}})"), InvalidArgument);
  EXPECT_THROW(parse_run_config(R"({"schema_version":2})"), Error);
  EXPECT_THROW(parse_run_config(R"({"n_local":"five"})"), Error);
  EXPECT_THROW(parse_run_config("{"), Error);
  const RunConfig c = parse_run_config(R"({"schema_version":1,"seed":9})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.n_local, 5);
}

TEST(RunConfig, DottedOverrides) {
  RunConfig c;
  apply_override(c, "cfc_train.optimizer.lr=0.002");
  apply_override(c, "model.dac.use_mv_tokens=false");
  apply_override(c, "dac_train.optimizer.schedule=cosine");
  EXPECT_EQ(c.cfc_train.optimizer.lr, 0.002);
  EXPECT_FALSE(c.model.dac.use_mv_tokens);
  EXPECT_EQ(c.dac_train.optimizer.schedule, LrSchedule::Cosine);
  EXPECT_THROW(apply_override(c, "model.nothing=1"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "seed"), InvalidArgument);
}

TEST(RunConfig, RejectsInconsistentModel) {
  RunConfig c = tiny_run_config();
  c.model.encoder.channels = {8};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny_run_config();
  c.n_local = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Schedule, WarmupThenCosine) {
  OptimizerSettings s;
  s.lr = 1e-3;
  EXPECT_EQ(scheduled_lr(s, 7, 100), 1e-3);
  s.schedule = LrSchedule::Cosine;
  s.warmup_steps = 10;
  EXPECT_NEAR(scheduled_lr(s, 0, 100), 1e-4, 1e-15);
  EXPECT_NEAR(scheduled_lr(s, 9, 100), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(s, 10, 100), 1e-3, 1e-15);
  EXPECT_LT(scheduled_lr(s, 99, 100), 1e-4);
  for (int i = 11; i < 100; ++i) EXPECT_LE(scheduled_lr(s, i, 100), scheduled_lr(s, i - 1, 100));
}

TEST(Schedule, BatchesCoverEachEpoch) {
  std::multiset<int> seen;
  for (int step = 0; step < 4; ++step) {
    const auto b = batch_for_step(5, step, 3, 12);
    EXPECT_EQ(b.size(), 3u);
    seen.insert(b.begin(), b.end());
  }
  for (int i = 0; i < 12; ++i) EXPECT_EQ(seen.count(i), 1u);
  EXPECT_EQ(batch_for_step(5, 2, 3, 12), batch_for_step(5, 2, 3, 12));
  EXPECT_NE(batch_for_step(5, 0, 3, 12), batch_for_step(6, 0, 3, 12));
}

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new RunConfig(tiny_run_config());
    data_ = new Dataset(Dataset::synthesize(config_->data));
    dac_ = new TrainResult(train_dac(*config_, *data_));
  }
  static void TearDownTestSuite() {
    delete dac_;
    delete data_;
    delete config_;
  }
  static RunConfig* config_;
  static Dataset* data_;
  static TrainResult* dac_;
};

RunConfig* TinyPipeline::config_ = nullptr;
Dataset* TinyPipeline::data_ = nullptr;
TrainResult* TinyPipeline::dac_ = nullptr;

void expect_same_params(const Checkpoint& a, const Checkpoint& b) {
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].name, b.params[i].name);
    EXPECT_TRUE(a.params[i].value == b.params[i].value) << a.params[i].name;
  }
  ASSERT_EQ(a.moments.size(), b.moments.size());
  for (std::size_t i = 0; i < a.moments.size(); ++i) {
    EXPECT_TRUE(a.moments[i].first == b.moments[i].first) << a.moments[i].name;
    EXPECT_TRUE(a.moments[i].second == b.moments[i].second) << a.moments[i].name;
  }
}

TEST_F(TinyPipeline, DacTrainingIsDeterministic) {
  EXPECT_EQ(dac_->losses.size(), 4u);
  for (double l : dac_->losses) EXPECT_TRUE(std::isfinite(l));
  const TrainResult again = train_dac(*config_, *data_);
  EXPECT_EQ(again.losses, dac_->losses);
  expect_same_params(again.checkpoint, dac_->checkpoint);
}

TEST_F(TinyPipeline, DacResumeMatchesUninterrupted) {
  TempDir dir("resume");
  TrainOptions first;
  first.stop_at = 2;
  const TrainResult head = train_dac(*config_, *data_, first);
  EXPECT_EQ(head.checkpoint.step, 2);
  save_checkpoint(dir / "half.ckpt", head.checkpoint);
  const Checkpoint loaded = load_checkpoint(dir / "half.ckpt");
  TrainOptions second;
  second.resume = &loaded;
  const TrainResult tail = train_dac(*config_, *data_, second);
  expect_same_params(tail.checkpoint, dac_->checkpoint);
  std::vector<double> joined = head.losses;
  joined.insert(joined.end(), tail.losses.begin(), tail.losses.end());
  EXPECT_EQ(joined, dac_->losses);
}

TEST_F(TinyPipeline, CfcResumeMatchesUninterrupted) {
  const TrainResult full = train_cfc(*config_, *data_, dac_->checkpoint);
  EXPECT_EQ(full.losses.size(), 3u);
  TrainOptions first;
  first.stop_at = 1;
  const TrainResult head = train_cfc(*config_, *data_, dac_->checkpoint, first);
  TrainOptions second;
  second.resume = &head.checkpoint;
  const TrainResult tail = train_cfc(*config_, *data_, dac_->checkpoint, second);
  expect_same_params(tail.checkpoint, full.checkpoint);
}

TEST_F(TinyPipeline, FrozenHeadKeepsInitialValues) {
  RunConfig c = *config_;
  c.cfc_train.freeze_recovery_head = true;
  const TrainResult r = train_cfc(c, *data_, dac_->checkpoint);
  const CfcModel fresh = make_cfc(c);
  const auto head = fresh.head_parameters();
  const CfcModel trained = cfc_from_checkpoint(r.checkpoint);
  const auto trained_head = trained.head_parameters();
  ASSERT_GT(head.size(), 0u);
  for (std::size_t i = 0; i < head.size(); ++i) {
    EXPECT_TRUE(head.items()[i].var.value() == trained_head.items()[i].var.value()) << head.items()[i].name;
  }
  bool moved = false;
  const auto blocks = fresh.block_parameters(), trained_blocks = trained.block_parameters();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    moved = moved || !(blocks.items()[i].var.value() == trained_blocks.items()[i].var.value());
  }
  EXPECT_TRUE(moved);
}

TEST_F(TinyPipeline, CheckpointRoundTripAndMismatch) {
  TempDir dir("ckpt");
  save_checkpoint(dir / "dac.ckpt", dac_->checkpoint);
  const Checkpoint back = load_checkpoint(dir / "dac.ckpt");
  EXPECT_EQ(back.stage, "dac");
  EXPECT_EQ(back.step, dac_->checkpoint.step);
  EXPECT_EQ(back.config_json, dac_->checkpoint.config_json);
  expect_same_params(back, dac_->checkpoint);
  EXPECT_EQ(format_run_config(config_from_checkpoint(back)), format_run_config(*config_));

  EXPECT_EQ(reason_of([&] { load_checkpoint(dir / "absent.ckpt"); }), "missing-checkpoint");
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), FormatError);
  EXPECT_EQ(reason_of([&] { require_compatible(back, "cfc", back.fingerprint); }), "fingerprint-mismatch");

  RunConfig wider = *config_;
  wider.model.dac.decoder_dim = 12;
  TrainOptions resume;
  resume.resume = &back;
  EXPECT_EQ(reason_of([&] { train_dac(wider, *data_, resume); }), "fingerprint-mismatch");
  EXPECT_EQ(reason_of([&] { train_cfc(wider, *data_, back); }), "fingerprint-mismatch");
}

TEST_F(TinyPipeline, IdentityEvaluationAnchorsTheInput) {
  const IdentityRecoverer id;
  const EvaluationReport r = evaluate(*data_, EvalMode::Oracle, id, nullptr);
  ASSERT_EQ(r.clips.size(), 3u);
  for (std::size_t i = 1; i < r.clips.size(); ++i) EXPECT_LT(r.clips[i - 1].id, r.clips[i].id);
  ASSERT_TRUE(r.mean_oracle_masked_psnr().has_value());
  EXPECT_DOUBLE_EQ(*r.mean_oracle_masked_psnr(), r.mean_input_masked_psnr());
  EXPECT_FALSE(r.mean_delta_psnr().has_value());
  EXPECT_THROW(evaluate(*data_, EvalMode::Blind, id, nullptr), Error);
}

TEST_F(TinyPipeline, BothModesReportDelta) {
  const TrainResult cfc = train_cfc(*config_, *data_, dac_->checkpoint);
  const DacModel dac = dac_from_checkpoint(dac_->checkpoint);
  const CfcModel model = cfc_from_checkpoint(cfc.checkpoint);
  const ModelRecoverer rec(dac, model, config_->n_local, config_->n_nonlocal);
  const EvaluationReport r = evaluate(*data_, EvalMode::Both, rec, &dac);
  ASSERT_TRUE(r.mean_delta_psnr().has_value());
  EXPECT_NEAR(*r.mean_delta_psnr(), *r.mean_blind_masked_psnr() - *r.mean_oracle_masked_psnr(), 1e-9);
  ASSERT_TRUE(r.detection().has_value());
  EXPECT_NE(r.to_json().find("delta"), std::string::npos);
  EXPECT_NE(r.to_table().find("mean"), std::string::npos);
}

TEST_F(TinyPipeline, RecoverKeepsUnmaskedPixels) {
  const TrainResult cfc = train_cfc(*config_, *data_, dac_->checkpoint);
  const DacModel dac = dac_from_checkpoint(dac_->checkpoint);
  const CfcModel model = cfc_from_checkpoint(cfc.checkpoint);
  const VideoRecord& rec = data_->record(0);
  const RecoveryResult out =
      recover_video(dac, model, rec.corrupted, rec.sideinfo, &rec.gt, config_->n_local, config_->n_nonlocal);
  ASSERT_EQ(out.recovered.length(), rec.corrupted.length());
  for (int f = 0; f < rec.corrupted.length(); ++f) {
    for (Eigen::Index i = 0; i < rec.gt.masks[f].data.rows(); ++i) {
      if (rec.gt.masks[f].data(i, 0) == 0.0) {
        EXPECT_TRUE(out.recovered.frames[f].data.row(i) == rec.corrupted.frames[f].data.row(i));
      }
    }
  }
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "bvr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

TEST(Cli, SimulateIsByteIdentical) {
  TempDir dir("cli_sim");
  const std::vector<std::string> common{"--set", "data.clips=2", "--set", "data.frames=3", "--set", "data.height=32",
                                        "--set", "data.width=32", "--set", "model.height=32", "--set", "model.width=32"};
  for (const char* name : {"a", "b"}) {
    std::vector<std::string> args{"simulate", "--seed", "11", "--out", (dir / name).string()};
    args.insert(args.end(), common.begin(), common.end());
    ASSERT_EQ(run_cli(args), 0);
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), dir / "a"));
  }
  ASSERT_FALSE(files.empty());
  for (const auto& f : files) EXPECT_EQ(read_bytes(dir / "a" / f), read_bytes(dir / "b" / f)) << f;
}

TEST(Cli, ErrorsExitWithReason) {
  TempDir dir("cli_err");
  std::string err;
  EXPECT_EQ(run_cli({"recover", "--data", dir.path().string(), "--dac", (dir / "none.ckpt").string(), "--cfc",
                     (dir / "none2.ckpt").string(), "--out", (dir / "out").string()},
                    nullptr, &err),
            2);
  EXPECT_NE(err.find("error: "), std::string::npos);
  EXPECT_EQ(run_cli({"evaluate", "--data", dir.path().string(), "--mode", "blind"}, nullptr, &err), 2);
  EXPECT_EQ(run_cli({"simulate"}, nullptr, &err), 2);
  EXPECT_NE(err.find("error: usage"), std::string::npos);
  EXPECT_EQ(run_cli({"simulate", "--seed", "1", "--out", (dir / "x").string(), "--set", "model.bogus=1"}, nullptr, &err), 2);
  EXPECT_NE(err.find("invalid-argument"), std::string::npos);
}

TEST(Cli, MissingCheckpointReason) {
  TempDir dir("cli_ckpt");
  ASSERT_EQ(run_cli({"simulate", "--seed", "1", "--out", (dir / "data").string(), "--set", "data.clips=1", "--set",
                     "data.frames=3", "--set", "data.height=32", "--set", "data.width=32", "--set",
                     "model.height=32", "--set", "model.width=32"}),
            0);
  std::string err;
  EXPECT_EQ(run_cli({"train-cfc", "--seed", "1", "--data", (dir / "data").string(), "--dac", (dir / "nope.ckpt").string(), "--out",
                     (dir / "c.ckpt").string()},
                    nullptr, &err),
            2);
  EXPECT_NE(err.find("error: missing-checkpoint"), std::string::npos) << err;
}

}  // namespace
}  // namespace bvr
