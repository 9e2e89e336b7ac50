#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bvr/cfc.hpp"
#include "bvr/dac.hpp"
#include "bvr/dataset.hpp"
#include "bvr/detection.hpp"
#include "bvr/metrics.hpp"

namespace bvr {

enum class EvalMode { Oracle, Blind, Both };
EvalMode parse_eval_mode(std::string_view text);
const char* to_string(EvalMode mode);

// Maps a corrupted record plus masks to a recovered video.
class Recoverer {
 public:
  virtual ~Recoverer() = default;
  virtual std::string name() const = 0;
  virtual VideoSequence recover(const VideoRecord& record, const MaskSequence& masks) const = 0;
};

// Returns the corrupted input unchanged; anchors the metrics.
class IdentityRecoverer final : public Recoverer {
 public:
  std::string name() const override { return "identity"; }
  VideoSequence recover(const VideoRecord& record, const MaskSequence& masks) const override;
};

class ModelRecoverer final : public Recoverer {
 public:
  ModelRecoverer(const DacModel& dac, const CfcModel& cfc, int n_local, int n_nonlocal)
      : dac_(dac), cfc_(cfc), n_local_(n_local), n_nonlocal_(n_nonlocal) {}
  std::string name() const override { return "cfc"; }
  VideoSequence recover(const VideoRecord& record, const MaskSequence& masks) const override;

 private:
  const DacModel& dac_;
  const CfcModel& cfc_;
  int n_local_;
  int n_nonlocal_;
};

struct ModeScores {
  QualityReport masked;  // inside the ground-truth corrupted region
  QualityReport full;
};

struct ClipEvaluation {
  std::string id;
  ModeScores input;  // corrupted vs clean
  std::optional<ModeScores> oracle;
  std::optional<ModeScores> blind;
  std::optional<DetectionReport> detection;  // blind mode only
  // blind - oracle masked PSNR, when both modes ran.
  std::optional<double> delta_psnr_db;
};

struct EvaluationReport {
  EvalMode mode = EvalMode::Oracle;
  std::string recoverer;
  std::vector<ClipEvaluation> clips;  // sorted by clip id

  double mean_input_masked_psnr() const;
  std::optional<double> mean_oracle_masked_psnr() const;
  std::optional<double> mean_blind_masked_psnr() const;
  std::optional<double> mean_delta_psnr() const;
  std::optional<DetectionReport> detection() const;

  std::string to_json() const;
  // Aligned text table, one row per clip plus a mean row.
  std::string to_table() const;
};

// Blind mode requires `dac`.
EvaluationReport evaluate(const Dataset& dataset, EvalMode mode, const Recoverer& recoverer, const DacModel* dac);

}  // namespace bvr
