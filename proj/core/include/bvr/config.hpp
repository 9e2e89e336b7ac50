#pragma once

// Run configuration. Stored as JSON with a schema version; every field has a
// default so a file only needs the keys it changes. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bvr/dataset.hpp"
#include "bvr/model_config.hpp"

namespace bvr {

inline constexpr int kConfigSchemaVersion = 1;

enum class Stage { Simulate, TrainDac, TrainCfc, Recover, Evaluate };
Stage parse_stage(std::string_view text);
const char* to_string(Stage stage);

enum class LrSchedule { Constant, Cosine };

struct OptimizerSettings {
  std::string name = "adam";  // "adam" or "adamw"
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  LrSchedule schedule = LrSchedule::Constant;
  int warmup_steps = 0;
};

struct DacTrainSettings {
  int steps = 200;
  int batch_clips = 2;
  int frames_per_clip = 0;  // 0 uses n_local
  OptimizerSettings optimizer{"adamw", 5e-5, 0.9, 0.999, 1e-8, 0.01};
  int eval_every = 0;  // 0 disables periodic detection reports
};

enum class MaskSource { Detector, GroundTruth };

struct CfcTrainSettings {
  int steps = 300;
  int batch_clips = 4;
  OptimizerSettings optimizer{"adam", 1e-4};
  double completion_lr = 1e-5;
  bool freeze_recovery_head = false;
  MaskSource mask_source = MaskSource::Detector;
  double masked_l1_weight = 1.0;
  double full_l1_weight = 1.0;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  Stage stage = Stage::TrainDac;
  std::uint64_t seed = 0;
  int n_local = 5;     // N_l
  int n_nonlocal = 3;  // N_nl
  ModelConfig model;
  SynthesisConfig data;
  DacTrainSettings dac_train;
  CfcTrainSettings cfc_train;

  // Throws InvalidArgument naming the offending field.
  void validate() const;
};

// "default": desk-scale 64x64 with the published optimizer settings.
// "overfit": full-batch, higher learning rate, used by the overfit checks.
// "paper_scale": 432x240 frames, long schedules (not exercised in tests).
RunConfig preset(std::string_view name);
std::vector<std::string> preset_names();

RunConfig parse_run_config(std::string_view json_text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& config);
// Applies "dotted.key=value" where value is JSON (bare strings allowed).
void apply_override(RunConfig& config, std::string_view assignment);
// Applies every assignment, then validates the result once.
void apply_overrides(RunConfig& config, std::span<const std::string_view> assignments);

}  // namespace bvr
