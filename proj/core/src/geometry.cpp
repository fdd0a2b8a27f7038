#include "tsconv/geometry.hpp"

#include <algorithm>
#include <limits>

namespace tsconv {

namespace {

constexpr double kPi = std::numbers::pi;

double normalize_half_turn(double a) {
  a = std::fmod(a, kPi);
  if (a < 0.0) a += kPi;
  if (a >= kPi) a -= kPi;
  return a;
}

}  // namespace

Polygon4 MERect::corners() const {
  const Point d{std::cos(angle), std::sin(angle)};
  const Point n{-d.y, d.x};
  const double h1 = 0.5 * long_side;
  const double h2 = 0.5 * short_side;
  return {{center - h1 * d - h2 * n, center + h1 * d - h2 * n,
           center + h1 * d + h2 * n, center - h1 * d + h2 * n}};
}

DecodedBox decode_gghl(const GghlBox& box) {
  const auto& l = box.l;
  if (l[0] + l[2] <= 0.0 || l[1] + l[3] <= 0.0) {
    throw DegenerateBox("decode_gghl: HBB has zero extent");
  }
  const auto q = gghl_key_points<double>(box.l, box.s, box.anchor);
  DecodedBox out;
  out.hbb = {q[0].x, q[0].y, q[8].x, q[8].y};
  out.polygon = {{q[1], q[5], q[7], q[3]}};
  return out;
}

GghlBox encode_gghl(const Polygon4& polygon, Point anchor) {
  const auto& v = polygon.v;
  std::size_t top = 0, right = 0, bottom = 0, left = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    if (v[i].y < v[top].y || (v[i].y == v[top].y && v[i].x < v[top].x)) top = i;
    if (v[i].x > v[right].x || (v[i].x == v[right].x && v[i].y < v[right].y)) right = i;
    if (v[i].y > v[bottom].y || (v[i].y == v[bottom].y && v[i].x > v[bottom].x)) bottom = i;
    if (v[i].x < v[left].x || (v[i].x == v[left].x && v[i].y > v[left].y)) left = i;
  }
  const Rect r = bounding_rect(polygon);
  GghlBox b;
  b.anchor = anchor;
  b.l = {anchor.y - r.y0, r.x1 - anchor.x, r.y1 - anchor.y, anchor.x - r.x0};
  b.s = {v[top].x - r.x0, v[right].y - r.y0, r.x1 - v[bottom].x, r.y1 - v[left].y};
  const double hbb_area = r.area();
  b.area_ratio = hbb_area > 0.0 ? polygon_area(polygon) / hbb_area : 0.0;
  return b;
}

double signed_area(std::span<const Point> pts) {
  double acc = 0.0;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    acc += cross(pts[i], pts[(i + 1) % n]);
  }
  return 0.5 * acc;
}

double polygon_area(const Polygon4& p) { return std::abs(signed_area(p.v)); }

Rect bounding_rect(const Polygon4& p) {
  Rect r{p.v[0].x, p.v[0].y, p.v[0].x, p.v[0].y};
  for (const auto& q : p.v) {
    r.x0 = std::min(r.x0, q.x);
    r.y0 = std::min(r.y0, q.y);
    r.x1 = std::max(r.x1, q.x);
    r.y1 = std::max(r.y1, q.y);
  }
  return r;
}

bool is_convex(const Polygon4& p) {
  int sign = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point a = p.v[i], b = p.v[(i + 1) % 4], c = p.v[(i + 2) % 4];
    const double z = cross(b - a, c - b);
    if (std::abs(z) < 1e-12) continue;
    const int s = z > 0.0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return sign != 0;
}

Polygon4 normalized_clockwise(const Polygon4& p) {
  if (signed_area(p.v) >= 0.0) return p;
  return {{p.v[0], p.v[3], p.v[2], p.v[1]}};
}

MERect merect_of(const Polygon4& polygon) {
  const double area = polygon_area(polygon);
  const Rect bb = bounding_rect(polygon);
  const double scale = std::max(bb.width(), bb.height());
  if (!(scale > 0.0) || area <= 1e-12 * scale * scale) {
    throw DegeneratePolygon("merect_of: collinear vertices");
  }
  double best_area = std::numeric_limits<double>::infinity();
  MERect best;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point e = polygon.v[(i + 1) % 4] - polygon.v[i];
    const double len = std::hypot(e.x, e.y);
    if (len < 1e-12 * scale) continue;
    const Point u{e.x / len, e.y / len};
    const Point n{-u.y, u.x};
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double nmin = umin, nmax = -umin;
    for (const auto& q : polygon.v) {
      const double pu = dot(q, u), pn = dot(q, n);
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      nmin = std::min(nmin, pn);
      nmax = std::max(nmax, pn);
    }
    const double wu = umax - umin, wn = nmax - nmin;
    const double a = wu * wn;
    if (a < best_area * (1.0 - 1e-12)) {
      best_area = a;
      best.center = 0.5 * (umin + umax) * u + 0.5 * (nmin + nmax) * n;
      const Point dir = wu >= wn ? u : n;
      best.long_side = std::max(wu, wn);
      best.short_side = std::min(wu, wn);
      double alpha = normalize_half_turn(std::atan2(dir.y, dir.x));
      if (best.long_side - best.short_side <= 1e-9 * best.long_side) {
        alpha = std::fmod(alpha, 0.5 * kPi);
      }
      if (kPi - alpha < 1e-12) alpha = 0.0;
      best.angle = alpha;
    }
  }
  return best;
}

double point_segment_distance(Point p, Point a, Point b) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Point c = a + t * ab;
  return std::hypot(p.x - c.x, p.y - c.y);
}

double polygon_membership(std::span<const Point> polygon, Point p) {
  double worst = -std::numeric_limits<double>::infinity();
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = polygon[i], b = polygon[(i + 1) % n];
    const Point e = b - a;
    const double len = std::hypot(e.x, e.y);
    if (len == 0.0) continue;
    worst = std::max(worst, -cross(e, p - a) / len);
  }
  return worst;
}

double iou_rect(const Rect& a, const Rect& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0) throw DegenerateBox("iou_hbb: zero-area rect");
  return iou_hbb(a, b);
}

double giou_rect(const Rect& a, const Rect& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0) throw DegenerateBox("giou_hbb: zero-area rect");
  return giou_hbb(a, b);
}

std::vector<Point> clip_convex(std::span<const Point> subject, std::span<const Point> clip) {
  std::vector<Point> out(subject.begin(), subject.end());
  const std::size_t m = clip.size();
  for (std::size_t i = 0; i < m && !out.empty(); ++i) {
    const Point a = clip[i], b = clip[(i + 1) % m];
    const Point e = b - a;
    auto side = [&](Point p) { return cross(e, p - a); };
    std::vector<Point> in;
    in.swap(out);
    const std::size_t n = in.size();
    for (std::size_t k = 0; k < n; ++k) {
      const Point cur = in[k], nxt = in[(k + 1) % n];
      const double sc = side(cur), sn = side(nxt);
      if (sc >= 0.0) out.push_back(cur);
      if ((sc >= 0.0) != (sn >= 0.0)) {
        const double t = sc / (sc - sn);
        out.push_back(cur + t * (nxt - cur));
      }
    }
  }
  return out;
}

double iou_polygon(const Polygon4& a, const Polygon4& b) {
  const Polygon4 pa = normalized_clockwise(a);
  const Polygon4 pb = normalized_clockwise(b);
  const double area_a = polygon_area(pa);
  const double area_b = polygon_area(pb);
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const auto inter_poly = clip_convex(pa.v, pb.v);
  const double inter = inter_poly.size() >= 3 ? std::abs(signed_area(inter_poly)) : 0.0;
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace tsconv
