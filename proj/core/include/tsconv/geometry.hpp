#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "tsconv/dual.hpp"
#include "tsconv/errors.hpp"

// Oriented-box geometry. Image coordinates: x to the right, y down. "Clockwise"
// means clockwise as seen on screen, which is a positive shoelace area in these
// coordinates. Angles are measured from +x towards +y (clockwise on screen).
namespace tsconv {

template <class T>
struct BasicPoint {
  T x{};
  T y{};
};
using Point = BasicPoint<double>;

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }

// Axis-aligned rectangle [x0, x1] x [y0, y1].
template <class T>
struct BasicRect {
  T x0{}, y0{}, x1{}, y1{};
  T width() const { return x1 - x0; }
  T height() const { return y1 - y0; }
  T area() const { return width() * height(); }
};
using Rect = BasicRect<double>;

// Vertices stored clockwise. decode_gghl starts at the vertex on the top HBB
// edge; other producers keep whatever clockwise rotation they had.
struct Polygon4 {
  std::array<Point, 4> v{};
};

// Gliding-vertex encoding relative to an anchor:
//   l = distances to the HBB edges (top, right, bottom, left),
//   s = glide of the OBB vertex along the top edge (from the top-left corner),
//       right edge (from top-right), bottom edge (from bottom-right) and left
//       edge (from bottom-left).
struct GghlBox {
  std::array<double, 4> l{};
  std::array<double, 4> s{};
  Point anchor{};
  double area_ratio = 1.0;
};

struct DecodedBox {
  Rect hbb;
  Polygon4 polygon;
};

struct MERect {
  Point center{};
  double long_side = 0.0;   // S1
  double short_side = 0.0;  // S2
  double angle = 0.0;       // alpha in [0, pi), direction of the long side

  Polygon4 corners() const;
  double area() const { return long_side * short_side; }
};

// HBB corner/OBB vertex key points q0..q8 of a gliding box, row-major
// (q0 top-left HBB corner, q1 top vertex, ..., q4 anchor, ..., q8 bottom-right).
template <class T>
std::array<BasicPoint<T>, 9> gghl_key_points(const std::array<T, 4>& l,
                                             const std::array<T, 4>& s,
                                             const BasicPoint<T>& anchor) {
  const T& x = anchor.x;
  const T& y = anchor.y;
  std::array<BasicPoint<T>, 9> q;
  q[0] = {x - l[3], y - l[0]};
  q[1] = {x - l[3] + s[0], y - l[0]};
  q[2] = {x + l[1], y - l[0]};
  q[3] = {x - l[3], y + l[2] - s[3]};
  q[4] = {x, y};
  q[5] = {x + l[1], y - l[0] + s[1]};
  q[6] = {x - l[3], y + l[2]};
  q[7] = {x + l[1] - s[2], y + l[2]};
  q[8] = {x + l[1], y + l[2]};
  return q;
}

DecodedBox decode_gghl(const GghlBox& box);

// Inverse of decode_gghl for a clockwise convex quadrilateral seen from
// `anchor`. Distances may be negative when the anchor lies outside the HBB.
GghlBox encode_gghl(const Polygon4& polygon, Point anchor);

double signed_area(std::span<const Point> pts);
double polygon_area(const Polygon4& p);
Rect bounding_rect(const Polygon4& p);
bool is_convex(const Polygon4& p);
// Reorders vertices clockwise (positive shoelace) keeping the first vertex.
Polygon4 normalized_clockwise(const Polygon4& p);

// Rotating calipers over the polygon's edge directions.
MERect merect_of(const Polygon4& polygon);

// Signed distance from p to the boundary of a convex clockwise polygon:
// negative inside, positive outside.
double polygon_membership(std::span<const Point> polygon, Point p);
double point_segment_distance(Point p, Point a, Point b);

template <class T>
T iou_hbb(const BasicRect<T>& a, const BasicRect<T>& b) {
  using sc::max;
  using sc::min;
  const T iw = max(T(0.0), min(a.x1, b.x1) - max(a.x0, b.x0));
  const T ih = max(T(0.0), min(a.y1, b.y1) - max(a.y0, b.y0));
  const T inter = iw * ih;
  const T uni = a.area() + b.area() - inter;
  return inter / uni;
}

template <class T>
T giou_hbb(const BasicRect<T>& a, const BasicRect<T>& b) {
  using sc::max;
  using sc::min;
  const T iw = max(T(0.0), min(a.x1, b.x1) - max(a.x0, b.x0));
  const T ih = max(T(0.0), min(a.y1, b.y1) - max(a.y0, b.y0));
  const T inter = iw * ih;
  const T uni = a.area() + b.area() - inter;
  const T cw = max(a.x1, b.x1) - min(a.x0, b.x0);
  const T ch = max(a.y1, b.y1) - min(a.y0, b.y0);
  const T enclose = cw * ch;
  return inter / uni - (enclose - uni) / enclose;
}

// Checked wrappers: zero-area input is a DegenerateBox.
double iou_rect(const Rect& a, const Rect& b);
double giou_rect(const Rect& a, const Rect& b);

// Convex polygon IoU via Sutherland-Hodgman clipping.
double iou_polygon(const Polygon4& a, const Polygon4& b);
std::vector<Point> clip_convex(std::span<const Point> subject,
                               std::span<const Point> clip);

inline Polygon4 rect_polygon(const Rect& r) {
  return {{Point{r.x0, r.y0}, Point{r.x1, r.y0}, Point{r.x1, r.y1},
           Point{r.x0, r.y1}}};
}

}  // namespace tsconv
