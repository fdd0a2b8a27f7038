#include "tsconv/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace tsconv::loss {

using assign::Tag;

Counts count_tags(std::span<const LevelTargets> levels) {
  Counts c;
  for (const auto& lv : levels) {
    c.pos += static_cast<int>(lv.assign->count(Tag::kPositive));
    c.neg += static_cast<int>(lv.assign->count(Tag::kNegative));
    c.sneg += static_cast<int>(lv.assign->count(Tag::kSoftNegative));
  }
  return c;
}

namespace {

void check_levels(std::span<const LevelTargets> levels, std::size_t n_preds, const char* op) {
  if (levels.empty() || levels.size() != n_preds) {
    throw ContractError(std::string(op) + ": need one prediction per level");
  }
}

ad::Var accumulate(ad::Tape* tape, const std::vector<ad::Var>& parts) {
  if (parts.empty()) return tape->scalar(0.0);
  ad::Var acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = ad::add(acc, parts[i]);
  return acc;
}

double inv_or_zero(int m) { return m > 0 ? 1.0 / m : 0.0; }

}  // namespace

ad::Var objectness_loss(std::span<const LevelTargets> levels, std::span<const ad::Var> obj,
                        double gamma) {
  check_levels(levels, obj.size(), "objectness_loss");
  const Counts c = count_tags(levels);
  std::vector<ad::Var> parts;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& am = *levels[k].assign;
    if (obj[k].shape() != Shape{am.w, am.h, 1}) throw ShapeError("objectness_loss: obj shape");
    FeatureGrid aux({am.w, am.h, 3});
    for (std::size_t i = 0; i < am.cells(); ++i) {
      double* a = aux.data().data() + i * 3;
      a[0] = static_cast<double>(am.tag[i]);
      switch (am.tag[i]) {
        case Tag::kPositive:
          a[1] = am.l[i];
          a[2] = inv_or_zero(c.pos);
          break;
        case Tag::kNegative:
          a[2] = inv_or_zero(c.neg);
          break;
        case Tag::kSoftNegative:
          a[2] = am.w_sneg[i] * inv_or_zero(c.sneg);
          break;
        case Tag::kIgnored:
          break;
      }
    }
    const ad::Var in[] = {obj[k]};
    using D = Dual<1>;
    auto per_cell = ad::map_cells<1, 1>(in, &aux, [gamma](int, int, const D* x, const double* a, D* out) {
      const auto tag = static_cast<Tag>(static_cast<int>(a[0]));
      if (tag == Tag::kIgnored || a[2] == 0.0) return;
      const D p = sc::clamp(x[0], D(kProbEps), D(1.0 - kProbEps));
      if (tag == Tag::kPositive) {
        out[0] = -a[2] * pow(abs(a[1] - p), gamma) * log(p);
      } else {
        out[0] = -a[2] * pow(p, gamma) * log(1.0 - p);
      }
    });
    parts.push_back(ad::sum(per_cell));
  }
  return accumulate(obj.front().tape(), parts);
}

ad::Var localization_loss(std::span<const LevelTargets> levels, std::span<const ad::Var> init,
                          std::span<const ad::Var> refined) {
  check_levels(levels, init.size(), "localization_loss");
  check_levels(levels, refined.size(), "localization_loss");
  const Counts c = count_tags(levels);
  std::vector<ad::Var> parts;
  if (c.pos == 0) return init.front().tape()->scalar(0.0);
  const double scale = 1.0 / c.pos;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& am = *levels[k].assign;
    const auto& box = levels[k].box;
    if (box.shape() != Shape{am.w, am.h, 9}) throw ShapeError("localization_loss: gt box shape");
    FeatureGrid aux({am.w, am.h, 10});
    bool any = false;
    for (std::size_t i = 0; i < am.cells(); ++i) {
      if (am.tag[i] != Tag::kPositive) continue;
      any = true;
      std::copy_n(box.data().data() + i * 9, 9, aux.data().data() + i * 10);
      aux[i * 10 + 9] = 1.0;
    }
    if (!any) continue;
    const ad::Var in[] = {init[k], refined[k]};
    using D = Dual<18>;
    auto per_cell = ad::map_cells<18, 1>(in, &aux, [scale](int, int, const D* x, const double* a, D* out) {
      if (a[9] == 0.0) return;
      const std::array<double, 4> lg{a[0], a[1], a[2], a[3]};
      const std::array<double, 4> sg{a[4], a[5], a[6], a[7]};
      D total(0.0);
      for (int stage = 0; stage < 2; ++stage) {
        const D* p = x + 9 * stage;
        const std::array<D, 4> lp{p[0], p[1], p[2], p[3]};
        const std::array<D, 4> sp{p[4], p[5], p[6], p[7]};
        total += assign::box_loss<D>(lp, sp, p[8], lg, sg, a[8]);
      }
      out[0] = total * scale;
    });
    parts.push_back(ad::sum(per_cell));
  }
  return accumulate(init.front().tape(), parts);
}

ad::Var classification_loss(std::span<const LevelTargets> levels, std::span<const ad::Var> cls) {
  check_levels(levels, cls.size(), "classification_loss");
  const Counts c = count_tags(levels);
  if (c.pos == 0) return cls.front().tape()->scalar(0.0);
  const double scale = 1.0 / c.pos;
  std::vector<ad::Var> parts;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& am = *levels[k].assign;
    const ad::Var& pred = cls[k];
    const Shape s = pred.shape();
    if (s.w != am.w || s.h != am.h || levels[k].cls.shape() != s) {
      throw ShapeError("classification_loss: shape mismatch " + s.str());
    }
    FeatureGrid weight(s);
    bool any = false;
    for (std::size_t i = 0; i < am.cells(); ++i) {
      if (am.tag[i] != Tag::kPositive) continue;
      any = true;
      for (int h = 0; h < s.f; ++h) weight[i * s.f + h] = scale;
    }
    if (!any) continue;
    const FeatureGrid& target = levels[k].cls;
    double value = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (weight[i] == 0.0) continue;
      const double p = std::clamp(pred.value()[i], kProbEps, 1.0 - kProbEps);
      value -= weight[i] * (target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
    }
    parts.push_back(pred.tape()->record(
        FeatureGrid({1, 1, 1}, value), {pred}, [pred, weight, target](ad::Tape& t, std::span<const double> g) {
          auto& gp = t.grad_buffer(pred);
          for (std::size_t i = 0; i < weight.size(); ++i) {
            if (weight[i] == 0.0) continue;
            const double raw = pred.value()[i];
            if (raw < kProbEps || raw > 1.0 - kProbEps) continue;
            gp[i] += g[0] * weight[i] * (-target[i] / raw + (1.0 - target[i]) / (1.0 - raw));
          }
        }));
  }
  return accumulate(cls.front().tape(), parts);
}

ad::Var sum_terms(const ad::Var& obj, const ad::Var& loc, const ad::Var& cls) {
  return ad::add(ad::add(obj, loc), cls);
}

LossTerms total_loss(std::span<const LevelTargets> levels, std::span<const LevelPreds> preds,
                     double gamma) {
  std::vector<ad::Var> obj, init, refined, cls;
  for (const auto& p : preds) {
    obj.push_back(p.obj);
    init.push_back(p.init);
    refined.push_back(p.refined);
    cls.push_back(p.cls);
  }
  LossTerms out;
  out.obj = objectness_loss(levels, obj, gamma);
  out.loc = localization_loss(levels, init, refined);
  out.cls = classification_loss(levels, cls);
  out.total = sum_terms(out.obj, out.loc, out.cls);
  const Counts c = count_tags(levels);
  out.report.obj = out.obj.scalar();
  out.report.loc = out.loc.scalar();
  out.report.cls = out.cls.scalar();
  out.report.total = out.total.scalar();
  out.report.m_pos = c.pos;
  out.report.m_neg = c.neg;
  out.report.m_sneg = c.sneg;
  return out;
}

std::string LossReport::header() {
  return "iter\tloss_obj\tloss_loc\tloss_cls\tloss_total\tm_pos\tm_neg\tm_sneg";
}

std::string LossReport::line(long iteration) const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld\t%.17g\t%.17g\t%.17g\t%.17g\t%d\t%d\t%d", iteration, obj, loc,
                cls, total, m_pos, m_neg, m_sneg);
  return buf;
}

}  // namespace tsconv::loss
