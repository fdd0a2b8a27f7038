#include "tsconv/label_assign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tsconv::assign {

double gaussian_score(const MERect& r, Point p) {
  const double c = std::cos(r.angle), s = std::sin(r.angle);
  const double dx = p.x - r.center.x, dy = p.y - r.center.y;
  const double u = c * dx + s * dy;   // along the long side
  const double v = -s * dx + c * dy;  // along the short side
  const double a = 0.5 * r.long_side, b = 0.5 * r.short_side;
  return std::exp(-0.5 * (u * u / (a * a) + v * v / (b * b)));
}

GaussianField gaussian_field(const MERect& r, int w, int h, double stride, double floor,
                             double min_peak) {
  if (!(r.long_side > 0.0) || !(r.short_side > 0.0)) {
    throw DegenerateBox("gaussian_field: MERect sides must be positive");
  }
  GaussianField g;
  g.merect = r;
  g.stride = stride;
  g.score = FeatureGrid({w, h, 1});
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double f = gaussian_score(r, {(x + 0.5) * stride, (y + 0.5) * stride});
      g.score.at(x, y, 0) = f;
      peak = std::max(peak, f);
    }
  }
  if (peak <= std::max(floor, min_peak)) {
    const int cx = std::clamp(static_cast<int>(std::floor(r.center.x / stride)), 0, w - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(r.center.y / stride)), 0, h - 1);
    g.score.at(cx, cy, 0) = 1.0;
    g.forced_center = true;
  }
  for (int i = 0; i < w * h; ++i) {
    if (g.score[static_cast<std::size_t>(i)] > floor) g.support.push_back(i);
  }
  return g;
}

LocScore loc_score(const GghlBox& pred, const GghlBox& gt) {
  LocScore out;
  out.loss = box_loss<double>(pred.l, pred.s, pred.area_ratio, gt.l, gt.s, gt.area_ratio);
  out.score = std::exp(-out.loss);
  return out;
}

double scheduled_theta(double theta, long iter, long iter_max) {
  if (iter_max <= 0) return 0.0;
  const long it = std::clamp(iter, 0L, iter_max);
  return static_cast<double>(iter_max - it) / static_cast<double>(iter_max) * theta;
}

double combined_score(double f, double l, double c_hat, long iter, long iter_max, double theta,
                      bool in_region) {
  if (!in_region) return 0.0;
  const double t = scheduled_theta(theta, iter, iter_max);
  return t * f + (1.0 - t) * std::sqrt(l * c_hat);
}

const char* tag_name(Tag t) {
  switch (t) {
    case Tag::kNegative: return "negative";
    case Tag::kPositive: return "positive";
    case Tag::kSoftNegative: return "soft_negative";
    case Tag::kIgnored: return "ignored";
  }
  return "?";
}

AssignmentMap::AssignmentMap(int w_, int h_)
    : w(w_),
      h(h_),
      tag(static_cast<std::size_t>(w_) * h_, Tag::kNegative),
      f(tag.size(), 0.0),
      l(tag.size(), 0.0),
      d(tag.size(), 0.0),
      w_sneg(tag.size(), 0.0),
      owner(tag.size(), -1) {}

std::size_t AssignmentMap::count(Tag t) const {
  return static_cast<std::size_t>(std::count(tag.begin(), tag.end(), t));
}

std::string AssignmentMap::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "x,y,tag,F,L,D,w\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      os << x << ',' << y << ',' << tag_name(tag[i]) << ',' << f[i] << ',' << l[i] << ',' << d[i]
         << ',' << w_sneg[i] << '\n';
    }
  }
  return os.str();
}

AssignmentMap assign_dtla(std::span<const ObjectEvidence> objects, int w, int h,
                          const DtlaParams& params) {
  AssignmentMap map(w, h);
  const std::size_t cells = map.cells();
  const std::size_t n = objects.size();
  map.p.assign(n, 0);

  // Per object combined score on its support; ownership of shared cells goes
  // to the larger D, then larger F, then lower object index.
  std::vector<std::vector<double>> dscore(n, std::vector<double>(cells, -1.0));
  for (std::size_t o = 0; o < n; ++o) {
    const auto& ev = objects[o];
    if (ev.field->width() != w || ev.field->height() != h) {
      throw ShapeError("assign_dtla: field size mismatch");
    }
    for (int c : ev.field->support) {
      const auto i = static_cast<std::size_t>(c);
      dscore[o][i] = combined_score(ev.field->at(c), ev.loc[i], ev.cls[i], params.iter,
                                    params.iter_max, params.theta);
      const int cur = map.owner[i];
      bool take = cur < 0;
      if (!take) {
        const double dc = dscore[static_cast<std::size_t>(cur)][i];
        const double fc = objects[static_cast<std::size_t>(cur)].field->at(c);
        take = dscore[o][i] > dc || (dscore[o][i] == dc && ev.field->at(c) > fc);
      }
      if (take) map.owner[i] = static_cast<int>(o);
    }
  }

  for (std::size_t o = 0; o < n; ++o) {
    const auto& ev = objects[o];
    std::vector<int> candidates;
    double loc_sum = 0.0;
    for (int c : ev.field->support) {
      const auto i = static_cast<std::size_t>(c);
      if (map.owner[i] != static_cast<int>(o)) continue;
      const double f = ev.field->at(c);
      map.f[i] = f;
      map.l[i] = ev.loc[i];
      map.d[i] = dscore[o][i];
      loc_sum += ev.loc[i];
      if (f > params.threshold) {
        candidates.push_back(c);
      } else if (map.d[i] < params.threshold) {
        map.tag[i] = Tag::kSoftNegative;
        map.w_sneg[i] = 1.0 - map.d[i];
      } else {
        map.tag[i] = Tag::kIgnored;
      }
    }
    const int p = std::max(1, static_cast<int>(std::ceil(loc_sum)));
    map.p[o] = p;
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
      const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
      if (map.d[ia] != map.d[ib]) return map.d[ia] > map.d[ib];
      if (map.f[ia] != map.f[ib]) return map.f[ia] > map.f[ib];
      return a < b;
    });
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      map.tag[static_cast<std::size_t>(candidates[k])] =
          static_cast<int>(k) < p ? Tag::kPositive : Tag::kIgnored;
    }
  }
  return map;
}

AssignmentMap assign_gghl_static(std::span<const GaussianField* const> objects, int w, int h,
                                 double threshold) {
  AssignmentMap map(w, h);
  map.p.assign(objects.size(), 0);
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const GaussianField& g = *objects[o];
    if (g.width() != w || g.height() != h) throw ShapeError("assign_gghl_static: field size mismatch");
    for (int c : g.support) {
      const auto i = static_cast<std::size_t>(c);
      if (map.owner[i] < 0 || g.at(c) > map.f[i]) {
        map.owner[i] = static_cast<int>(o);
        map.f[i] = g.at(c);
      }
    }
  }
  for (std::size_t i = 0; i < map.cells(); ++i) {
    if (map.owner[i] >= 0 && map.f[i] > threshold) {
      map.tag[i] = Tag::kPositive;
      map.d[i] = map.f[i];
      map.l[i] = map.f[i];  // objectness target is the prior itself
      ++map.p[static_cast<std::size_t>(map.owner[i])];
    }
  }
  return map;
}

}  // namespace tsconv::assign
