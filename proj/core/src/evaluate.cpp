#include "bvr/evaluate.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "bvr/error.hpp"
#include "bvr/training.hpp"
#include "json.hpp"

namespace bvr {

EvalMode parse_eval_mode(std::string_view text) {
  if (text == "oracle") return EvalMode::Oracle;
  if (text == "blind") return EvalMode::Blind;
  if (text == "both") return EvalMode::Both;
  throw InvalidArgument("unknown evaluation mode '" + std::string(text) + "' (oracle, blind, both)");
}

const char* to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::Oracle: return "oracle";
    case EvalMode::Blind: return "blind";
    case EvalMode::Both: return "both";
  }
  return "?";
}

VideoSequence IdentityRecoverer::recover(const VideoRecord& record, const MaskSequence&) const {
  return record.corrupted;
}

VideoSequence ModelRecoverer::recover(const VideoRecord& record, const MaskSequence& masks) const {
  return recover_video(dac_, cfc_, record.corrupted, record.sideinfo, &masks, n_local_, n_nonlocal_).recovered;
}

namespace {

ModeScores score(const VideoSequence& recovered, const VideoRecord& record) {
  return {masked_sequence_quality(recovered, record.clean, record.gt.masks), sequence_quality(recovered, record.clean)};
}

template <typename Get>
std::optional<double> mean_over(const std::vector<ClipEvaluation>& clips, Get get) {
  double sum = 0.0;
  int n = 0;
  for (const auto& c : clips) {
    if (auto v = get(c)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::optional<double> masked_psnr(const std::optional<ModeScores>& s) {
  if (!s || s->masked.empty) return std::nullopt;
  return s->masked.psnr_db;
}

nlohmann::json scores_json(const ModeScores& s) {
  nlohmann::json j;
  j["masked_psnr_db"] = s.masked.empty ? nlohmann::json(nullptr) : nlohmann::json(s.masked.psnr_db);
  j["masked_ssim"] = s.masked.empty ? nlohmann::json(nullptr) : nlohmann::json(s.masked.ssim);
  j["psnr_db"] = s.full.psnr_db;
  j["ssim"] = s.full.ssim;
  for (const auto& [name, value] : s.full.external) j[name] = value;
  return j;
}

std::string cell(const std::optional<double>& v, int precision) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

}  // namespace

double EvaluationReport::mean_input_masked_psnr() const {
  return mean_over(clips, [](const ClipEvaluation& c) { return masked_psnr(c.input); }).value_or(0.0);
}

std::optional<double> EvaluationReport::mean_oracle_masked_psnr() const {
  return mean_over(clips, [](const ClipEvaluation& c) { return masked_psnr(c.oracle); });
}

std::optional<double> EvaluationReport::mean_blind_masked_psnr() const {
  return mean_over(clips, [](const ClipEvaluation& c) { return masked_psnr(c.blind); });
}

std::optional<double> EvaluationReport::mean_delta_psnr() const {
  return mean_over(clips, [](const ClipEvaluation& c) { return c.delta_psnr_db; });
}

std::optional<DetectionReport> EvaluationReport::detection() const {
  std::vector<DetectionReport> parts;
  for (const auto& c : clips) {
    if (c.detection) parts.push_back(*c.detection);
  }
  if (parts.empty()) return std::nullopt;
  return merge_reports(parts);
}

std::string EvaluationReport::to_json() const {
  nlohmann::json j;
  j["mode"] = bvr::to_string(mode);
  j["recoverer"] = recoverer;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : clips) {
    nlohmann::json r;
    r["clip"] = c.id;
    r["input"] = scores_json(c.input);
    if (c.oracle) r["oracle"] = scores_json(*c.oracle);
    if (c.blind) r["blind"] = scores_json(*c.blind);
    if (c.detection) r["detection"] = nlohmann::json::parse(bvr::to_json(*c.detection));
    if (c.delta_psnr_db) r["delta_masked_psnr_db"] = *c.delta_psnr_db;
    rows.push_back(r);
  }
  j["clips"] = rows;
  nlohmann::json mean;
  mean["input_masked_psnr_db"] = mean_input_masked_psnr();
  if (auto v = mean_oracle_masked_psnr()) mean["oracle_masked_psnr_db"] = *v;
  if (auto v = mean_blind_masked_psnr()) mean["blind_masked_psnr_db"] = *v;
  if (auto v = mean_delta_psnr()) mean["delta_masked_psnr_db"] = *v;
  if (auto d = detection()) mean["detection"] = nlohmann::json::parse(bvr::to_json(*d));
  j["mean"] = mean;
  return j.dump(2) + "\n";
}

std::string EvaluationReport::to_table() const {
  const std::vector<std::string> header{"clip",      "in_mPSNR", "or_mPSNR", "or_PSNR", "or_SSIM",
                                        "bl_mPSNR", "bl_PSNR",  "bl_SSIM",  "delta",   "IoU"};
  std::vector<std::vector<std::string>> rows;
  auto full = [](const std::optional<ModeScores>& s, bool ssim) -> std::optional<double> {
    if (!s) return std::nullopt;
    return ssim ? s->full.ssim : s->full.psnr_db;
  };
  for (const auto& c : clips) {
    rows.push_back({c.id, cell(masked_psnr(c.input), 2), cell(masked_psnr(c.oracle), 2), cell(full(c.oracle, false), 2),
                    cell(full(c.oracle, true), 4), cell(masked_psnr(c.blind), 2), cell(full(c.blind, false), 2),
                    cell(full(c.blind, true), 4), cell(c.delta_psnr_db, 2),
                    cell(c.detection ? std::optional<double>(c.detection->mean_iou) : std::nullopt, 4)});
  }
  auto mean_of = [&](auto get) { return mean_over(clips, get); };
  rows.push_back(
      {"mean", cell(mean_input_masked_psnr(), 2), cell(mean_oracle_masked_psnr(), 2),
       cell(mean_of([&](const ClipEvaluation& c) { return full(c.oracle, false); }), 2),
       cell(mean_of([&](const ClipEvaluation& c) { return full(c.oracle, true); }), 4), cell(mean_blind_masked_psnr(), 2),
       cell(mean_of([&](const ClipEvaluation& c) { return full(c.blind, false); }), 2),
       cell(mean_of([&](const ClipEvaluation& c) { return full(c.blind, true); }), 4), cell(mean_delta_psnr(), 2),
       cell(detection() ? std::optional<double>(detection()->mean_iou) : std::nullopt, 4)});

  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i == 0) {
        os << std::left << std::setw(static_cast<int>(width[i])) << r[i];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[i])) << r[i];
      }
    }
    os << "\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return os.str();
}

EvaluationReport evaluate(const Dataset& dataset, EvalMode mode, const Recoverer& recoverer, const DacModel* dac) {
  const bool oracle = mode != EvalMode::Blind;
  const bool blind = mode != EvalMode::Oracle;
  if (blind && !dac) throw Error("missing-checkpoint", "blind evaluation needs a detector checkpoint");
  if (dataset.size() == 0) throw InvalidArgument("evaluate: empty dataset");

  std::vector<int> order(static_cast<std::size_t>(dataset.size()));
  for (int i = 0; i < dataset.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return dataset.record(a).id < dataset.record(b).id; });

  EvaluationReport report;
  report.mode = mode;
  report.recoverer = recoverer.name();
  for (int idx : order) {
    const VideoRecord& rec = dataset.record(idx);
    ClipEvaluation c;
    c.id = rec.id;
    c.input = score(rec.corrupted, rec);
    if (oracle) c.oracle = score(recoverer.recover(rec, rec.gt), rec);
    if (blind) {
      const MaskSequence masks = dac->predict_masks(rec.corrupted, rec.sideinfo);
      c.detection = detection_metrics(masks, rec.gt);
      c.blind = score(recoverer.recover(rec, masks), rec);
    }
    if (oracle && blind) {
      const auto o = masked_psnr(c.oracle);
      const auto b = masked_psnr(c.blind);
      if (o && b) c.delta_psnr_db = *b - *o;
    }
    report.clips.push_back(std::move(c));
  }
  return report;
}

}  // namespace bvr
