#pragma once

#include <span>
#include <string>
#include <vector>

#include "tsconv/autodiff.hpp"
#include "tsconv/label_assign.hpp"

namespace tsconv::loss {

inline constexpr double kProbEps = 1e-7;
inline constexpr double kDefaultGamma = 2.0;

// Supervision of one pyramid level, fixed for the iteration.
struct LevelTargets {
  const assign::AssignmentMap* assign = nullptr;
  // (W,H,9): gt l (4), s (4), area ratio at positive cells.
  FeatureGrid box;
  // (W,H,M_C): one-hot category at positive cells.
  FeatureGrid cls;
};

// Differentiable predictions of one level.
struct LevelPreds {
  ad::Var obj;      // (W,H,1) probabilities
  ad::Var init;     // (W,H,9) l^, s^, a^
  ad::Var refined;  // (W,H,9) l~, s~, a~
  ad::Var cls;      // (W,H,M_C) probabilities
};

struct Counts {
  int pos = 0;
  int neg = 0;
  int sneg = 0;
};
Counts count_tags(std::span<const LevelTargets> levels);

// Focal objectness over positives (target L), negatives and weighted soft
// negatives, each term normalized by its own count.
ad::Var objectness_loss(std::span<const LevelTargets> levels, std::span<const ad::Var> obj,
                        double gamma = kDefaultGamma);

// Mean over positives of box_loss(init) + box_loss(refined).
ad::Var localization_loss(std::span<const LevelTargets> levels, std::span<const ad::Var> init,
                          std::span<const ad::Var> refined);

// Mean over positives of the per-category binary cross-entropy sum.
ad::Var classification_loss(std::span<const LevelTargets> levels, std::span<const ad::Var> cls);

struct LossReport {
  double obj = 0.0;
  double loc = 0.0;
  double cls = 0.0;
  double total = 0.0;
  int m_pos = 0;
  int m_neg = 0;
  int m_sneg = 0;

  static std::string header();
  // Tab separated, round-trip precision.
  std::string line(long iteration) const;
};

struct LossTerms {
  ad::Var obj;
  ad::Var loc;
  ad::Var cls;
  ad::Var total;
  LossReport report;
};

LossTerms total_loss(std::span<const LevelTargets> levels, std::span<const LevelPreds> preds,
                     double gamma = kDefaultGamma);

// Sum of the three components as a differentiable node.
ad::Var sum_terms(const ad::Var& obj, const ad::Var& loc, const ad::Var& cls);

}  // namespace tsconv::loss
