#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsconv/config.hpp"
#include "tsconv/data.hpp"
#include "tsconv/losses.hpp"
#include "tsconv/model.hpp"
#include "tsconv/postprocess.hpp"

namespace tsconv {

std::vector<data::LevelGeometry> level_geometry(int image_w, int image_h);

struct AssignOptions {
  AssignerKind kind = AssignerKind::kDtla;
  double threshold = 0.3;
  double theta = 0.3;
  long iter = 0;
  long iter_max = 1;
};

// Candidate cells (F > T inside an object's encoded region), one set per level.
std::vector<PositionSet> candidate_positions(const data::EncodedTargets& targets, double threshold);

struct ImageLoss {
  std::vector<LevelOutput> outputs;
  std::vector<assign::AssignmentMap> maps;
  std::vector<loss::LevelTargets> targets;
  loss::LossTerms terms;
};

// Forward over one image with the sampling plans at the candidate cells,
// label assignment from the current predictions, and the three losses.
ImageLoss image_loss(const TsConvModel& model, ad::Tape& tape, std::span<const ad::Var> bound,
                     const FeatureGrid& image, const data::EncodedTargets& targets,
                     const AssignOptions& options, double gamma);

// Training and validation scenes described by a config.
std::vector<data::Scene> training_scenes(const RunConfig& cfg);
std::vector<data::Scene> validation_scenes(const RunConfig& cfg);

struct StepResult {
  long iteration = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  loss::LossReport report;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<data::Scene> scenes);

  const TsConvModel& model() const { return model_; }
  TsConvModel& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  long iteration() const { return iter_; }
  bool done() const { return iter_ >= cfg_.iterations; }

  // One SGD iteration; throws NumericError on a non-finite loss.
  StepResult step();
  double lr_at(long iter) const;

  static std::string metrics_header();
  static std::string metrics_line(const StepResult& r);

 private:
  const data::EncodedTargets& targets_for(std::size_t index, const data::Scene& scene, bool cached);

  RunConfig cfg_;
  std::vector<data::Scene> scenes_;
  TsConvModel model_;
  std::vector<std::vector<double>> velocity_;
  std::vector<data::EncodedTargets> cache_;
  std::vector<bool> cached_;
  data::EncodedTargets scratch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
  long iter_ = 0;
};

// Inference: decode, then rotated NMS.
std::vector<Detection> predict(const TsConvModel& model, const FeatureGrid& image, double conf,
                               double nms);

struct DatasetEval {
  EvalResult result;
  double mean_iou = 0.0;  // matched detections at IoU 0.5
  std::size_t matched = 0;
  std::size_t detections = 0;
};
DatasetEval evaluate_model(const TsConvModel& model, std::span<const data::Scene> scenes,
                           double conf, double nms);

}  // namespace tsconv
