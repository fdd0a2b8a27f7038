#include "tsconv/ls_conv.hpp"

#include <algorithm>
#include <numeric>

namespace tsconv {

std::size_t PositionSet::count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

namespace ls {

LocSamplePlan loc_sample_points(const GghlBox& box, const std::array<double, 4>& sigma) {
  LocSamplePlan plan;
  plan.sigma = sigma;
  plan.points = loc_points<double>(box.l, box.s, box.anchor, sigma);
  return plan;
}

GghlBox refine_obb(const GghlBox& initial, const std::array<double, 4>& delta_l,
                   const std::array<double, 4>& delta_s) {
  GghlBox out = initial;
  refine_box<double>(initial.l, initial.s, delta_l, delta_s, out.l, out.s);
  return out;
}

FeatureGrid embed_coords(const FeatureGrid& grid) {
  const Shape s = grid.shape();
  FeatureGrid out({s.w, s.h, s.f + 2});
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      std::copy_n(grid.cell(x, y), s.f, out.cell(x, y));
      out.at(x, y, s.f) = x;
      out.at(x, y, s.f + 1) = y;
    }
  }
  return out;
}

ad::Var embed_coords(const ad::Var& grid) {
  const Shape s = grid.shape();
  FeatureGrid idx({s.w, s.h, 2});
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      idx.at(x, y, 0) = x;
      idx.at(x, y, 1) = y;
    }
  }
  const ad::Var parts[] = {grid, grid.tape()->constant(std::move(idx))};
  return ad::concat_channels(parts);
}

ad::Var loc_plan_coords(const ad::Var& box, const ad::Var& sigma, const PositionSet& positives,
                        double stride) {
  const Shape s = box.shape();
  if (positives.width() != s.w || positives.height() != s.h) {
    throw ShapeError("loc_plan_coords: positive set does not match grid " + s.str());
  }
  const auto offsets = ad::square_offsets();
  const ad::Var inputs[] = {box, sigma};
  using D = Dual<12>;
  return ad::map_cells<12, 18>(
      inputs, nullptr, [&](int x, int y, const D* in, const double*, D* out) {
        if (!positives.contains(x, y)) {
          for (int j = 0; j < 9; ++j) {
            out[2 * j] = D(x + offsets[j][0]);
            out[2 * j + 1] = D(y + offsets[j][1]);
          }
          return;
        }
        const Point a = cell_anchor(x, y, stride);
        const std::array<D, 4> l{in[0], in[1], in[2], in[3]};
        const std::array<D, 4> sl{in[4], in[5], in[6], in[7]};
        const std::array<D, 4> sg{in[8], in[9], in[10], in[11]};
        const auto pts = loc_points<D>(l, sl, BasicPoint<D>{D(a.x), D(a.y)}, sg);
        for (int j = 0; j < 9; ++j) {
          out[2 * j] = pts[j].x / stride - 0.5;
          out[2 * j + 1] = pts[j].y / stride - 0.5;
        }
      });
}

FeatureGrid assemble_loc_coords(const std::vector<CellLocPlan>& plans, const PositionSet& positives,
                                double stride) {
  const int w = positives.width(), h = positives.height();
  FeatureGrid coords = ad::offset_coords(w, h, ad::square_offsets());
  PositionSet seen(w, h);
  for (const auto& cp : plans) {
    if (cp.cell.x < 0 || cp.cell.y < 0 || cp.cell.x >= w || cp.cell.y >= h ||
        !positives.contains(cp.cell.x, cp.cell.y)) {
      throw ContractError("ls_conv: sample plan at non-positive cell (" + std::to_string(cp.cell.x) +
                          "," + std::to_string(cp.cell.y) + ")");
    }
    seen.insert(cp.cell.x, cp.cell.y);
    double* c = coords.cell(cp.cell.x, cp.cell.y);
    for (int j = 0; j < 9; ++j) {
      c[2 * j] = to_grid(cp.plan.points[j].x, stride);
      c[2 * j + 1] = to_grid(cp.plan.points[j].y, stride);
    }
  }
  if (seen.count() != positives.count()) {
    throw ContractError("ls_conv: positive cell without a sample plan");
  }
  return coords;
}

ad::Var ls_conv_forward(const ad::Var& sce, const ad::Var& kernel, const ad::Var& coords,
                        const ad::Var& modulation) {
  return ad::deform_conv3x3(sce, kernel, coords, modulation);
}

}  // namespace ls
}  // namespace tsconv
