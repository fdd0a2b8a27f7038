#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsconv/feature_grid.hpp"
#include "tsconv/geometry.hpp"

namespace tsconv::assign {

inline constexpr double kDefaultSupportFloor = 1e-3;

// Two pyramid levels; objects whose HBB max side is below kLevelSplit pixels
// go to level 0.
inline constexpr std::array<double, 2> kLevelStrides{8.0, 16.0};
inline constexpr double kLevelSplit = 24.0;
inline int level_for(double hbb_max_side) { return hbb_max_side < kLevelSplit ? 0 : 1; }

// Unnormalized Gaussian prior of an oriented box over one feature level.
struct GaussianField {
  MERect merect;
  double stride = 1.0;
  FeatureGrid score;  // (W,H,1), F in [0,1]
  // Row-major indices of the cells with F above the support floor (R_gh).
  std::vector<int> support;
  // Set when no cell cleared the floor/threshold and the center cell was
  // forced into the support with F = 1.
  bool forced_center = false;

  int width() const { return score.width(); }
  int height() const { return score.height(); }
  double at(int cell) const { return score[static_cast<std::size_t>(cell)]; }
};

// exp(-1/2 (X - mu)^T C^-1 (X - mu)) with C = Q diag((S1/2)^2, (S2/2)^2) Q^T.
double gaussian_score(const MERect& r, Point p);

// Evaluates the field at cell anchors. When no cell exceeds `min_peak` the
// cell containing the MERect center is forced to F = 1.
GaussianField gaussian_field(const MERect& r, int w, int h, double stride,
                             double floor = kDefaultSupportFloor, double min_peak = 0.0);

// Box loss between a ground truth and a prediction sharing one anchor:
//   1 - GIoU(HBBs) + mean_n (glide ratio difference)^2 + (a - a~)^2
// Glides are compared as fractions of their own HBB side so the term is
// scale free. Distances are taken relative to the anchor (only l, s, a used).
template <class T>
T box_loss(const std::array<T, 4>& l_pred, const std::array<T, 4>& s_pred, const T& a_pred,
           const std::array<double, 4>& l_gt, const std::array<double, 4>& s_gt, double a_gt) {
  using sc::max;
  const BasicRect<T> rp{-l_pred[3], -l_pred[0], l_pred[1], l_pred[2]};
  const BasicRect<T> rg{T(-l_gt[3]), T(-l_gt[0]), T(l_gt[1]), T(l_gt[2])};
  const T giou = giou_hbb(rg, rp);
  const T wp = max(l_pred[1] + l_pred[3], T(1e-9));
  const T hp = max(l_pred[0] + l_pred[2], T(1e-9));
  const double wg = std::max(l_gt[1] + l_gt[3], 1e-9);
  const double hg = std::max(l_gt[0] + l_gt[2], 1e-9);
  const T d0 = s_pred[0] / wp - s_gt[0] / wg;
  const T d1 = s_pred[1] / hp - s_gt[1] / hg;
  const T d2 = s_pred[2] / wp - s_gt[2] / wg;
  const T d3 = s_pred[3] / hp - s_gt[3] / hg;
  const T mse = (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3) * 0.25;
  const T da = a_pred - a_gt;
  return (1.0 - giou) + mse + da * da;
}

struct LocScore {
  double score = 0.0;  // L = exp(-loss), never differentiated
  double loss = 0.0;
};
LocScore loc_score(const GghlBox& pred, const GghlBox& gt);

// theta~ = (iter_max - iter) / iter_max * theta
double scheduled_theta(double theta, long iter, long iter_max);
// D = theta~ F + (1 - theta~) sqrt(L C) inside R_gh, 0 outside.
double combined_score(double f, double l, double c_hat, long iter, long iter_max, double theta,
                      bool in_region = true);

enum class Tag : std::uint8_t { kNegative = 0, kPositive = 1, kSoftNegative = 2, kIgnored = 3 };
const char* tag_name(Tag t);

struct AssignmentMap {
  int w = 0;
  int h = 0;
  std::vector<Tag> tag;
  std::vector<double> f;       // prior score of the owning object (0 if none)
  std::vector<double> l;       // localization score
  std::vector<double> d;       // combined score
  std::vector<double> w_sneg;  // soft-negative weight (0 elsewhere)
  std::vector<int> owner;      // object index or -1
  std::vector<int> p;          // per object Top-P budget

  AssignmentMap() = default;
  AssignmentMap(int w, int h);
  std::size_t cells() const { return tag.size(); }
  std::size_t count(Tag t) const;
  std::string to_csv() const;
};

// Per-object evidence for the dynamic assigner: the prior field plus
// localization (L) and classification (C^) scores at every cell, (W,H,1).
struct ObjectEvidence {
  const GaussianField* field = nullptr;
  FeatureGrid loc;
  FeatureGrid cls;
};

struct DtlaParams {
  double threshold = 0.3;  // T
  double theta = 0.3;
  long iter = 0;
  long iter_max = 1;
};

AssignmentMap assign_dtla(std::span<const ObjectEvidence> objects, int w, int h,
                          const DtlaParams& params);

// Baseline: the highest prior owns a cell, which is positive when F > T;
// positives carry F as their objectness target (l).
AssignmentMap assign_gghl_static(std::span<const GaussianField* const> objects, int w, int h,
                                 double threshold);

}  // namespace tsconv::assign
