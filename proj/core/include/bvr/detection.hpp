#pragma once

#include <string>
#include <vector>

#include "bvr/autograd.hpp"
#include "bvr/model_config.hpp"
#include "bvr/video.hpp"

namespace bvr {

struct DacLoss {
  ag::Var total;
  double focal = 0.0;
  double dice = 0.0;
  double iou_l1 = 0.0;
  double ce = 0.0;
  double true_iou = 0.0;  // IoU of the thresholded prediction, the L1 target
};

// 1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s) with p = sigmoid(logits).
ag::Var soft_dice_loss(const ag::Var& logits, const Matrix& target, double smooth);

// w_focal * focal + w_dice * dice + w_l1 * |iou_pred - IoU| + w_ce * BCE.
// `logits` is (H*W) x 1; `gt` must be a binary H x W x 1 mask. The L1 term
// is skipped when `iou_pred` is null or empty.
DacLoss dac_loss(const ag::Var& logits, const Image& gt, const ag::Var* iou_pred, const DacConfig& config);

struct FrameDetection {
  double iou = 0.0;
  double dice = 0.0;
  double acc = 0.0;
  double recall = 0.0;
};

struct DetectionReport {
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double mean_acc = 0.0;
  double mean_recall = 0.0;
  std::vector<FrameDetection> per_frame;
};

// Conventions: IoU and Dice are 1 when both masks are empty; recall is 1
// when the ground truth is empty.
FrameDetection frame_detection(const Image& pred, const Image& gt);
DetectionReport detection_metrics(const MaskSequence& pred, const MaskSequence& gt);
// Frame-weighted mean of several reports.
DetectionReport merge_reports(const std::vector<DetectionReport>& reports);

std::string to_json(const DetectionReport& report);

}  // namespace bvr
