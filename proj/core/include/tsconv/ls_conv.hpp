#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tsconv/autodiff.hpp"
#include "tsconv/geometry.hpp"

namespace tsconv {

// Cells of one feature level that run the box-guided sampling branch.
class PositionSet {
 public:
  PositionSet() = default;
  PositionSet(int w, int h) : w_(w), h_(h), mask_(static_cast<std::size_t>(w) * h, 0) {}

  int width() const { return w_; }
  int height() const { return h_; }
  bool contains(int x, int y) const { return mask_[static_cast<std::size_t>(y) * w_ + x] != 0; }
  void insert(int x, int y) { mask_[static_cast<std::size_t>(y) * w_ + x] = 1; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }

 private:
  int w_ = 0;
  int h_ = 0;
  std::vector<std::uint8_t> mask_;
};

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Pixel position of a cell's anchor at the given stride (cell center).
inline Point cell_anchor(int x, int y, double stride) {
  return {(x + 0.5) * stride, (y + 0.5) * stride};
}
// Pixel coordinate -> fractional grid coordinate (inverse of cell_anchor).
inline double to_grid(double pixel, double stride) { return pixel / stride - 0.5; }

namespace ls {

struct LocSamplePlan {
  std::array<Point, 9> points{};  // pixels, row-major taps q~0..q~8
  std::array<double, 9> modulation{1, 1, 1, 1, 1, 1, 1, 1, 1};
  std::array<double, 4> sigma{0.5, 0.5, 0.5, 0.5};  // sliding controls for q~0,q~2,q~6,q~8
};

// Denominators below this fall back to the vertical-edge branch.
inline constexpr double kSlopeEps = 1e-12;

// The nine LS-Conv sampling points: q~4 is the anchor, q~1,3,5,7 the OBB
// vertices and q~0,2,6,8 slide along the OBB edges adjacent to the HBB
// corners under control of sigma (order: 0, 2, 6, 8).
template <class T>
std::array<BasicPoint<T>, 9> loc_points(const std::array<T, 4>& l, const std::array<T, 4>& s,
                                        const BasicPoint<T>& anchor,
                                        const std::array<T, 4>& sigma) {
  using std::abs;
  auto q = gghl_key_points<T>(l, s, anchor);
  std::array<BasicPoint<T>, 9> p = q;
  const auto along = [](const BasicPoint<T>& a, const BasicPoint<T>& b, const T& x) {
    return a.y + (b.y - a.y) / (b.x - a.x) * (x - a.x);
  };

  // q~0 on edge q1-q3
  if (abs(value_of(q[1].x - q[0].x)) < kSlopeEps || abs(value_of(q[3].x - q[1].x)) < kSlopeEps) {
    p[0] = {q[1].x, q[1].y + sigma[0] * (q[3].y - q[1].y)};
  } else {
    const T x = q[0].x + sigma[0] * (q[1].x - q[0].x);
    p[0] = {x, along(q[1], q[3], x)};
  }
  // q~2 on edge q1-q5
  if (abs(value_of(q[1].x - q[2].x)) < kSlopeEps || abs(value_of(q[5].x - q[1].x)) < kSlopeEps) {
    p[2] = {q[1].x, q[2].y + sigma[1] * (q[5].y - q[2].y)};
  } else {
    const T x = q[2].x - sigma[1] * (q[2].x - q[1].x);
    p[2] = {x, along(q[1], q[5], x)};
  }
  // q~6 on edge q3-q7
  if (abs(value_of(q[6].x - q[7].x)) < kSlopeEps || abs(value_of(q[3].x - q[7].x)) < kSlopeEps) {
    p[6] = {q[7].x, q[6].y - sigma[2] * (q[7].y - q[3].y)};
  } else {
    const T x = q[6].x + sigma[2] * (q[7].x - q[6].x);
    p[6] = {x, along(q[7], q[3], x)};
  }
  // q~8 on edge q7-q5
  if (abs(value_of(q[7].x - q[8].x)) < kSlopeEps || abs(value_of(q[5].x - q[7].x)) < kSlopeEps) {
    p[8] = {q[7].x, q[7].y - sigma[3] * (q[7].y - q[5].y)};
  } else {
    const T x = q[8].x - sigma[3] * (q[8].x - q[7].x);
    p[8] = {x, along(q[7], q[5], x)};
  }
  return p;
}

LocSamplePlan loc_sample_points(const GghlBox& box, const std::array<double, 4>& sigma);

// Multiplicative refinement followed by clamping s~ into its edge range.
template <class T>
void refine_box(const std::array<T, 4>& l, const std::array<T, 4>& s, const std::array<T, 4>& dl,
                const std::array<T, 4>& ds, std::array<T, 4>& l_out, std::array<T, 4>& s_out) {
  for (int n = 0; n < 4; ++n) {
    l_out[n] = l[n] * dl[n];
    s_out[n] = s[n] * ds[n];
  }
  const T width = l_out[1] + l_out[3];
  const T height = l_out[0] + l_out[2];
  s_out[0] = sc::clamp(s_out[0], T(0.0), width);
  s_out[2] = sc::clamp(s_out[2], T(0.0), width);
  s_out[1] = sc::clamp(s_out[1], T(0.0), height);
  s_out[3] = sc::clamp(s_out[3], T(0.0), height);
}

GghlBox refine_obb(const GghlBox& initial, const std::array<double, 4>& delta_l,
                   const std::array<double, 4>& delta_s);

// Appends column-index and row-index channels.
FeatureGrid embed_coords(const FeatureGrid& grid);
ad::Var embed_coords(const ad::Var& grid);

// Sampling coordinates (W,H,18) in grid units. Positive cells take the
// box-guided points built from box (l^ 4 ch, s^ 4 ch, pixels) and sigma
// (4 ch in (0,1)); all other cells keep the square 3x3 neighbourhood.
// Differentiable w.r.t. box and sigma at positive cells.
ad::Var loc_plan_coords(const ad::Var& box, const ad::Var& sigma, const PositionSet& positives,
                        double stride);

struct CellLocPlan {
  Cell cell;
  LocSamplePlan plan;
};
// Value-level assembly; every plan must sit on a positive cell and every
// positive cell needs a plan, otherwise ContractError.
FeatureGrid assemble_loc_coords(const std::vector<CellLocPlan>& plans, const PositionSet& positives,
                                double stride);

// Modulated 3x3 over the embedded grid, sampling at `coords`.
ad::Var ls_conv_forward(const ad::Var& sce, const ad::Var& kernel, const ad::Var& coords,
                        const ad::Var& modulation);

}  // namespace ls
}  // namespace tsconv
