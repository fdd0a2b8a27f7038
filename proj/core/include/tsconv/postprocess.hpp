#pragma once

#include <span>
#include <string>
#include <vector>

#include "tsconv/geometry.hpp"

namespace tsconv {

struct Detection {
  Polygon4 polygon;
  int cls = 0;
  double score = 0.0;
};

struct GroundTruth {
  Polygon4 polygon;
  int cls = 0;
  bool difficult = false;
};

// Greedy class-wise suppression in descending score order; a box is dropped
// when its polygon IoU with a kept box of the same class exceeds iou_thresh.
std::vector<Detection> nms_rotated(std::vector<Detection> dets, double iou_thresh);

enum class ApMode { kAllPoint, kVoc07 };

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
};

struct EvalResult {
  std::vector<double> thresholds;
  // ap[class][threshold index]
  std::vector<std::vector<double>> ap;
  std::vector<std::vector<PrCurve>> curves;
  std::vector<int> gt_count;  // non-difficult gts per class
  std::vector<double> map;    // per threshold
  double map50 = 0.0;
  double map75 = 0.0;
  double map50_95 = 0.0;
  // Nothing to evaluate (no gts and no detections); scores reported as 1.
  bool undefined = false;

  // Per-class rows followed by a summary row.
  std::string to_text(std::span<const std::string> class_names = {}) const;
};

std::vector<double> coco_thresholds();  // 0.50, 0.55, ..., 0.95

// All-point average precision of a precision/recall sequence.
double average_precision(std::span<const double> recall, std::span<const double> precision,
                         ApMode mode);

EvalResult evaluate(std::span<const std::vector<Detection>> dets,
                    std::span<const std::vector<GroundTruth>> gts, int num_classes,
                    std::span<const double> thresholds, ApMode mode = ApMode::kAllPoint);

struct MatchStats {
  double mean_iou = 0.0;
  std::size_t matched = 0;
};
// Greedy score-ordered matching per image and class at `iou_thresh`; mean
// IoU over the matched pairs (difficult gts skipped).
MatchStats matched_iou(std::span<const std::vector<Detection>> dets,
                       std::span<const std::vector<GroundTruth>> gts, double iou_thresh);

}  // namespace tsconv
