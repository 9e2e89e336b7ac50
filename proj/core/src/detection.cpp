#include "bvr/detection.hpp"

#include <cmath>

#include "json.hpp"

#include "bvr/error.hpp"

namespace bvr {

namespace {

void require_binary_mask(const Image& m, const char* what) {
  if (m.channels() != 1) throw ShapeError(std::string(what) + " must have one channel");
  for (Eigen::Index i = 0; i < m.data.rows(); ++i) {
    const double v = m.data(i, 0);
    if (v != 0.0 && v != 1.0) throw InvalidArgument(std::string(what) + " is not binary");
  }
}

}  // namespace

ag::Var soft_dice_loss(const ag::Var& logits, const Matrix& target, double smooth) {
  ag::Var p = ag::sigmoid(logits);
  ag::Var inter = ag::sum(ag::mul(p, ag::constant(target)));
  ag::Var num = ag::add_scalar(ag::scale(inter, 2.0), smooth);
  ag::Var den = ag::add_scalar(ag::sum(p), target.sum() + smooth);
  return ag::add_scalar(ag::scale(ag::mul(num, ag::reciprocal(den)), -1.0), 1.0);
}

DacLoss dac_loss(const ag::Var& logits, const Image& gt, const ag::Var* iou_pred, const DacConfig& config) {
  require_binary_mask(gt, "ground-truth mask");
  if (logits.cols() != 1 || logits.rows() != gt.pixels()) {
    throw ShapeError("dac_loss: logits " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                     " do not match a " + std::to_string(gt.height) + "x" + std::to_string(gt.width) + " mask");
  }
  const Matrix& g = gt.data;
  DacLoss out;

  ag::Var focal = ag::mean(ag::sigmoid_focal(logits, g, config.focal_alpha, config.focal_gamma));
  ag::Var dice = soft_dice_loss(logits, g, config.dice_smooth);
  ag::Var ce = ag::mean(ag::bce_with_logits(logits, g));
  out.focal = focal.item();
  out.dice = dice.item();
  out.ce = ce.item();

  long inter = 0;
  long uni = 0;
  const Matrix& l = logits.value();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const bool p = 1.0 / (1.0 + std::exp(-l(i, 0))) > config.threshold;
    const bool t = g(i, 0) == 1.0;
    inter += p && t;
    uni += p || t;
  }
  out.true_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);

  ag::Var total = ag::add(ag::scale(focal, config.w_focal), ag::scale(dice, config.w_dice));
  total = ag::add(total, ag::scale(ce, config.w_ce));
  if (iou_pred && *iou_pred) {
    if (iou_pred->rows() != 1 || iou_pred->cols() != 1) throw ShapeError("dac_loss: IoU prediction must be 1x1");
    ag::Var l1 = ag::abs(ag::add_scalar(*iou_pred, -out.true_iou));
    out.iou_l1 = l1.item();
    total = ag::add(total, ag::scale(l1, config.w_l1));
  }
  out.total = total;
  return out;
}

FrameDetection frame_detection(const Image& pred, const Image& gt) {
  require_binary_mask(pred, "predicted mask");
  require_binary_mask(gt, "ground-truth mask");
  if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("detection: mask extents differ");
  const Eigen::Index n = gt.pixels();
  const double tp = (pred.data.array() * gt.data.array()).sum();
  const double p = pred.data.sum();
  const double g = gt.data.sum();
  const double uni = p + g - tp;
  const double correct = static_cast<double>(n) - (p - tp) - (g - tp);
  FrameDetection f;
  f.iou = uni == 0.0 ? 1.0 : tp / uni;
  f.dice = p + g == 0.0 ? 1.0 : 2.0 * tp / (p + g);
  f.acc = correct / static_cast<double>(n);
  f.recall = g == 0.0 ? 1.0 : tp / g;
  return f;
}

DetectionReport detection_metrics(const MaskSequence& pred, const MaskSequence& gt) {
  if (pred.length() != gt.length()) throw ShapeError("detection: sequences have different lengths");
  if (pred.length() == 0) throw ShapeError("detection: empty sequence");
  DetectionReport r;
  for (int t = 0; t < pred.length(); ++t) {
    const FrameDetection f = frame_detection(pred.masks[t], gt.masks[t]);
    r.per_frame.push_back(f);
    r.mean_iou += f.iou;
    r.mean_dice += f.dice;
    r.mean_acc += f.acc;
    r.mean_recall += f.recall;
  }
  const double n = pred.length();
  r.mean_iou /= n;
  r.mean_dice /= n;
  r.mean_acc /= n;
  r.mean_recall /= n;
  return r;
}

DetectionReport merge_reports(const std::vector<DetectionReport>& reports) {
  DetectionReport r;
  for (const auto& part : reports) r.per_frame.insert(r.per_frame.end(), part.per_frame.begin(), part.per_frame.end());
  if (r.per_frame.empty()) return r;
  for (const auto& f : r.per_frame) {
    r.mean_iou += f.iou;
    r.mean_dice += f.dice;
    r.mean_acc += f.acc;
    r.mean_recall += f.recall;
  }
  const double n = static_cast<double>(r.per_frame.size());
  r.mean_iou /= n;
  r.mean_dice /= n;
  r.mean_acc /= n;
  r.mean_recall /= n;
  return r;
}

std::string to_json(const DetectionReport& report) {
  nlohmann::json j;
  j["mean_iou"] = report.mean_iou;
  j["mean_dice"] = report.mean_dice;
  j["mean_acc"] = report.mean_acc;
  j["mean_recall"] = report.mean_recall;
  j["frames"] = report.per_frame.size();
  return j.dump();
}

}  // namespace bvr
