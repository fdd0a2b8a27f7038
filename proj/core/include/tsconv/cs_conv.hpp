#pragma once

#include <array>
#include <vector>

#include "tsconv/autodiff.hpp"
#include "tsconv/geometry.hpp"
#include "tsconv/ls_conv.hpp"

namespace tsconv::cs {

// Row-major 3x3 coefficients K0..K8.
struct Kernel3x3 {
  std::array<double, 9> k{};
  bool circular = false;

  friend bool operator==(const Kernel3x3&, const Kernel3x3&) = default;
};

// Outer ring, clockwise on screen starting at the top-left tap.
inline constexpr std::array<int, 8> kOuterRing{0, 1, 2, 5, 8, 7, 6, 3};

// Interpolation weights for a corner tap of the circular kernel, applied to
// (own corner, first adjacent edge tap, second adjacent edge tap, center).
struct CornerStencil {
  int corner;
  int edge_a;
  int edge_b;
};
inline constexpr std::array<CornerStencil, 4> kCornerStencils{
    {{0, 1, 3}, {2, 1, 5}, {6, 3, 7}, {8, 5, 7}}};
std::array<double, 4> corner_weights();

// Corner taps resampled at radius 1 on the diagonals by bilinear
// interpolation; edge and center taps are kept.
Kernel3x3 circularize(const Kernel3x3& square);

// Clockwise rotation by k * 45 degrees (k taken mod 8). Odd k requires a
// circular kernel.
Kernel3x3 rotate_kernel(const Kernel3x3& kernel, int k);

// Fusion of the k-th rotations: even k blends circular and square with
// lambda[k / 2]; odd k returns the circular kernel.
Kernel3x3 fuse_kernels(const Kernel3x3& square_rot, const Kernel3x3& circular_rot,
                       const std::array<double, 4>& lambda, int k);

struct DckBank {
  Kernel3x3 square;
  Kernel3x3 circular;
  std::array<Kernel3x3, 8> fused;
  std::array<double, 4> lambda{};
  std::array<double, 8> beta{};

  // Normalizes beta onto the simplex. beta must be non-negative with a
  // positive sum.
  static DckBank build(const Kernel3x3& square, const std::array<double, 4>& lambda,
                       const std::array<double, 8>& beta);
  // sum_k beta_k * fused_k
  Kernel3x3 effective() const;
};

struct ClsSamplePlan {
  std::array<Point, 9> points{};  // pixels
  std::array<double, 18> omega{};  // (x, y) placement pairs per tap
  std::array<double, 9> modulation{1, 1, 1, 1, 1, 1, 1, 1, 1};
};

// Placement inside the MERect: offset (-S1/2 + wx*S1, -S2/2 + wy*S2) along the
// long/short axes, rotated by alpha about the rectangle center.
template <class T>
BasicPoint<T> cls_point(const MERect& r, const T& wx, const T& wy) {
  const double c = std::cos(r.angle), s = std::sin(r.angle);
  const T du = (wx - 0.5) * r.long_side;
  const T dv = (wy - 0.5) * r.short_side;
  return {r.center.x + c * du - s * dv, r.center.y + s * du + c * dv};
}

ClsSamplePlan cls_sample_points(const MERect& merect, const std::array<double, 18>& omega);

// Aggregated DCK weights for a (9, Cin, Cout) square kernel, lambda (1,1,4)
// and beta (1,1,8, already on the simplex). All 8 orientations share the
// sampled features and modulation, so the orientation sum folds into one
// kernel.
ad::Var dck_effective_kernel(const ad::Var& kernel, const ad::Var& lambda, const ad::Var& beta);

// Coordinates (W,H,18) in grid units: positive cells sample inside their
// MERect (aux channels: cx, cy, S1, S2, alpha in pixels) at omega; others use
// the circular neighbourhood. Differentiable w.r.t. omega.
ad::Var cls_plan_coords(const ad::Var& omega, const FeatureGrid& merects,
                        const PositionSet& positives, double stride);

struct CellClsPlan {
  Cell cell;
  ClsSamplePlan plan;
};
FeatureGrid assemble_cls_coords(const std::vector<CellClsPlan>& plans, const PositionSet& positives,
                                double stride);

ad::Var cs_conv_forward(const ad::Var& grid, const ad::Var& kernel, const ad::Var& lambda,
                        const ad::Var& beta, const ad::Var& coords, const ad::Var& modulation);

}  // namespace tsconv::cs
