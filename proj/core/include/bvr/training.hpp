#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "bvr/cfc.hpp"
#include "bvr/checkpoint.hpp"
#include "bvr/config.hpp"
#include "bvr/dac.hpp"
#include "bvr/dataset.hpp"
#include "bvr/detection.hpp"

namespace bvr {

struct TrainOptions {
  const Checkpoint* resume = nullptr;
  // Stop once this many steps are done (< 0: run to the configured count).
  // The schedule still spans the configured count, so a stopped run
  // resumes exactly.
  int stop_at = -1;
  std::function<void(int step, double loss)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // mean loss of each step run in this call
  std::vector<std::pair<int, DetectionReport>> reports;
};

// Learning rate for step `step` (0-based) of `total`.
double scheduled_lr(const OptimizerSettings& settings, int step, int total);

// Clip indices used by `step`: consecutive slices of a per-epoch seeded
// permutation of the dataset.
std::vector<int> batch_for_step(std::uint64_t seed, int step, int batch_clips, int clips);

TrainResult train_dac(const RunConfig& config, const Dataset& dataset, const TrainOptions& options = {});
// The detector is frozen; its masks and refined features are computed once
// per clip and reused.
TrainResult train_cfc(const RunConfig& config, const Dataset& dataset, const Checkpoint& dac,
                      const TrainOptions& options = {});

RunConfig config_from_checkpoint(const Checkpoint& checkpoint);
DacModel dac_from_checkpoint(const Checkpoint& checkpoint);
CfcModel cfc_from_checkpoint(const Checkpoint& checkpoint);

// Freshly initialised models, seeded from the run seed.
DacModel make_dac(const RunConfig& config);
CfcModel make_cfc(const RunConfig& config);

struct RecoveryResult {
  VideoSequence recovered;
  MaskSequence masks;  // masks actually used
};

// Recovers every frame using windows of n_local consecutive frames plus
// n_nonlocal evenly spaced references from outside the window. Detector
// masks are used when `masks` is null.
RecoveryResult recover_video(const DacModel& dac, const CfcModel& cfc, const VideoSequence& frames,
                             const std::vector<SideInfo>& info, const MaskSequence* masks, int n_local,
                             int n_nonlocal);

}  // namespace bvr
