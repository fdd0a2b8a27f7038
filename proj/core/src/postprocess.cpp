#include "tsconv/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace tsconv {

std::vector<Detection> nms_rotated(std::vector<Detection> dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.cls == d.cls && iou_polygon(k.polygon, d.polygon) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

double average_precision(std::span<const double> recall, std::span<const double> precision,
                         ApMode mode) {
  if (mode == ApMode::kVoc07) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= t - 1e-12) p = std::max(p, precision[i]);
      }
      ap += p / 11.0;
    }
    return ap;
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

namespace {

struct Ranked {
  std::size_t image;
  std::size_t index;
  double score;
};

}  // namespace

EvalResult evaluate(std::span<const std::vector<Detection>> dets,
                    std::span<const std::vector<GroundTruth>> gts, int num_classes,
                    std::span<const double> thresholds, ApMode mode) {
  if (dets.size() != gts.size()) throw ContractError("evaluate: detections and gts differ in image count");
  EvalResult res;
  res.thresholds.assign(thresholds.begin(), thresholds.end());
  const std::size_t nt = thresholds.size();
  res.ap.assign(num_classes, std::vector<double>(nt, 0.0));
  res.curves.assign(num_classes, std::vector<PrCurve>(nt));
  res.gt_count.assign(num_classes, 0);
  std::vector<std::vector<bool>> counted(num_classes, std::vector<bool>(nt, false));

  for (int c = 0; c < num_classes; ++c) {
    std::vector<Ranked> ranked;
    for (std::size_t im = 0; im < dets.size(); ++im) {
      for (std::size_t i = 0; i < dets[im].size(); ++i) {
        if (dets[im][i].cls == c) ranked.push_back({im, i, dets[im][i].score});
      }
      for (const auto& g : gts[im]) {
        if (g.cls == c && !g.difficult) ++res.gt_count[c];
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    const int npos = res.gt_count[c];

    for (std::size_t ti = 0; ti < nt; ++ti) {
      const double thr = thresholds[ti];
      std::vector<std::vector<bool>> matched(gts.size());
      for (std::size_t im = 0; im < gts.size(); ++im) matched[im].assign(gts[im].size(), false);
      std::vector<double> tp, fp;
      for (const auto& r : ranked) {
        const Detection& d = dets[r.image][r.index];
        double best = 0.0;
        int best_j = -1;
        for (std::size_t j = 0; j < gts[r.image].size(); ++j) {
          const auto& g = gts[r.image][j];
          if (g.cls != c) continue;
          const double iou = iou_polygon(d.polygon, g.polygon);
          if (iou > best) {
            best = iou;
            best_j = static_cast<int>(j);
          }
        }
        if (best_j >= 0 && best >= thr) {
          const auto j = static_cast<std::size_t>(best_j);
          if (gts[r.image][j].difficult) continue;
          if (!matched[r.image][j]) {
            matched[r.image][j] = true;
            tp.push_back(1.0);
            fp.push_back(0.0);
          } else {
            tp.push_back(0.0);
            fp.push_back(1.0);
          }
        } else {
          tp.push_back(0.0);
          fp.push_back(1.0);
        }
      }
      if (npos == 0 && tp.empty()) continue;  // class absent everywhere
      counted[c][ti] = true;
      if (npos == 0) {
        res.ap[c][ti] = 0.0;
        continue;
      }
      PrCurve& curve = res.curves[c][ti];
      double ctp = 0.0, cfp = 0.0;
      for (std::size_t i = 0; i < tp.size(); ++i) {
        ctp += tp[i];
        cfp += fp[i];
        curve.recall.push_back(ctp / npos);
        curve.precision.push_back(ctp / std::max(ctp + cfp, 1e-300));
      }
      res.ap[c][ti] = average_precision(curve.recall, curve.precision, mode);
    }
  }

  res.map.assign(nt, 0.0);
  bool any = false;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    double s = 0.0;
    int n = 0;
    for (int c = 0; c < num_classes; ++c) {
      if (!counted[c][ti]) {
        res.ap[c][ti] = 1.0;  // undefined for this class
        continue;
      }
      s += res.ap[c][ti];
      ++n;
    }
    if (n > 0) any = true;
    res.map[ti] = n > 0 ? s / n : 1.0;
  }
  res.undefined = !any;
  auto at = [&](double t) {
    for (std::size_t ti = 0; ti < nt; ++ti) {
      if (std::abs(thresholds[ti] - t) < 1e-9) return res.map[ti];
    }
    return std::nan("");
  };
  res.map50 = at(0.5);
  res.map75 = at(0.75);
  res.map50_95 = nt > 0 ? std::accumulate(res.map.begin(), res.map.end(), 0.0) / nt : std::nan("");
  return res;
}

MatchStats matched_iou(std::span<const std::vector<Detection>> dets,
                       std::span<const std::vector<GroundTruth>> gts, double iou_thresh) {
  if (dets.size() != gts.size()) throw ContractError("matched_iou: image count mismatch");
  MatchStats m;
  double total = 0.0;
  for (std::size_t im = 0; im < dets.size(); ++im) {
    std::vector<std::size_t> order(dets[im].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dets[im][a].score > dets[im][b].score;
    });
    std::vector<bool> used(gts[im].size(), false);
    for (std::size_t i : order) {
      const Detection& d = dets[im][i];
      double best = 0.0;
      int best_j = -1;
      for (std::size_t j = 0; j < gts[im].size(); ++j) {
        const auto& g = gts[im][j];
        if (used[j] || g.difficult || g.cls != d.cls) continue;
        const double iou = iou_polygon(d.polygon, g.polygon);
        if (iou > best) {
          best = iou;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j >= 0 && best >= iou_thresh) {
        used[static_cast<std::size_t>(best_j)] = true;
        total += best;
        ++m.matched;
      }
    }
  }
  m.mean_iou = m.matched ? total / static_cast<double>(m.matched) : 0.0;
  return m;
}

std::string EvalResult::to_text(std::span<const std::string> class_names) const {
  std::ostringstream os;
  char buf[128];
  os << "class\tgts";
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, "\tAP%.2f", t);
    os << buf;
  }
  os << '\n';
  for (std::size_t c = 0; c < ap.size(); ++c) {
    os << (c < class_names.size() ? class_names[c] : std::to_string(c)) << '\t' << gt_count[c];
    for (double v : ap[c]) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      os << buf;
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof buf, "summary\tmAP50=%.6f\tmAP75=%.6f\tmAP50:95=%.6f", map50, map75,
                map50_95);
  os << buf << (undefined ? "\tundefined=1" : "") << '\n';
  return os.str();
}

}  // namespace tsconv
