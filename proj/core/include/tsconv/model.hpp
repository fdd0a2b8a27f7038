#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tsconv/autodiff.hpp"
#include "tsconv/label_assign.hpp"
#include "tsconv/ls_conv.hpp"
#include "tsconv/postprocess.hpp"

namespace tsconv {

enum class HeadKind { kTsConv, kPlain };

struct ModelConfig {
  int num_classes = 3;
  int in_channels = 3;
  int width = 16;                  // pyramid / head channels
  std::array<int, 4> stages{8, 16, 24, 32};
  HeadKind head = HeadKind::kTsConv;
  double prefilter = 0.05;         // inference objectness gate for the sampling branches
  double log_l_clamp = 4.0;        // |raw| bound before exp for l^
  double log_delta_clamp = 1.0;    // |raw| bound before exp for the refinement factors
  double hbb_ratio = 0.9;          // decode as HBB when the area ratio exceeds this

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using assign::kLevelStrides;

struct Parameter {
  std::string name;
  FeatureGrid value;
};

// Differentiable per-level outputs of one forward pass.
struct LevelOutput {
  double stride = 8.0;
  PositionSet positives;
  ad::Var obj;      // (W,H,1)
  ad::Var init;     // (W,H,9) l^, s^, a^
  ad::Var refined;  // (W,H,9) l~, s~, a~
  ad::Var cls;      // (W,H,M_C)
  // Sampling controls; invalid in plain-head mode.
  ad::Var sigma, omega, m_loc, m_cls, lambda, beta;
  ad::Var loc_coords, cls_coords;
  FeatureGrid merects;  // (W,H,5) cx, cy, S1, S2, alpha
};

// Value snapshot used for decoding.
struct LevelPrediction {
  double stride = 8.0;
  FeatureGrid obj;
  FeatureGrid refined;
  FeatureGrid cls;
};
LevelPrediction snapshot(const LevelOutput& out);

class TsConvModel {
 public:
  TsConvModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t parameter_count() const;
  int index_of(const std::string& name) const;

  // Leaves for every parameter, in params() order.
  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad = true) const;

  // Image (W,H,C) in [0,1]; padded with zeros to a multiple of the coarsest
  // stride. `positives` (one set per level) selects where the guided
  // sampling runs; null applies the objectness pre-filter. `plan_boxes`
  // (W,H,8 per level: l, s) pins the box that places the sampling points;
  // by default it is the detached initial prediction.
  std::vector<LevelOutput> forward(ad::Tape& tape, std::span<const ad::Var> bound,
                                   const FeatureGrid& image,
                                   const std::vector<PositionSet>* positives = nullptr,
                                   const std::vector<FeatureGrid>* plan_boxes = nullptr) const;

  // Backbone and pyramid only.
  std::vector<ad::Var> features(ad::Tape& tape, std::span<const ad::Var> bound,
                                const FeatureGrid& image) const;

  static std::array<int, 2> level_size(int image_w, int image_h, int level);

 private:
  void add(const std::string& name, Shape shape);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

FeatureGrid pad_to_multiple(const FeatureGrid& image, int multiple);

// Fallback MERect for a predicted box whose polygon is degenerate.
MERect safe_merect(const GghlBox& box);

// Detections at every cell with obj * max class score above conf_thresh.
std::vector<Detection> decode(std::span<const LevelPrediction> levels, double conf_thresh,
                              double hbb_ratio = 0.9);

}  // namespace tsconv
