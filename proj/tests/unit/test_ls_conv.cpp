#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "tsconv/ls_conv.hpp"

using namespace tsconv;
using tsconv::testing::grad_check;
using tsconv::testing::random_grid;

namespace {

GghlBox box_of(Point anchor, std::array<double, 4> l, std::array<double, 4> s) {
  GghlBox b;
  b.anchor = anchor;
  b.l = l;
  b.s = s;
  return b;
}

// Sliding point i in {0,2,6,8} and the OBB edge it binds to.
struct Binding {
  int tap, a, b;
};
constexpr Binding kBindings[] = {{0, 1, 3}, {2, 1, 5}, {6, 3, 7}, {8, 7, 5}};

}  // namespace

TEST(LsConv, EmbedCoords) {
  const FeatureGrid g({4, 4, 1}, 0.0);
  const FeatureGrid e = ls::embed_coords(g);
  ASSERT_EQ(e.shape(), (Shape{4, 4, 3}));
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(e.at(x, y, 1), x);
      EXPECT_EQ(e.at(x, y, 2), y);
    }
  }
  EXPECT_EQ(e.at(3, 2, 1), 3.0);
  EXPECT_EQ(e.at(3, 2, 2), 2.0);

  std::mt19937_64 rng(1);
  const FeatureGrid r = random_grid({5, 3, 2}, rng);
  const FeatureGrid er = ls::embed_coords(r);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 2; ++c) EXPECT_EQ(er.at(x, y, c), r.at(x, y, c));
    }
  }
}

TEST(LsConv, DiamondSlidingPoint) {
  const auto plan = ls::loc_sample_points(box_of({2, 2}, {2, 2, 2, 2}, {2, 2, 2, 2}), {0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(plan.points[0].x, 1.0, 1e-15);
  EXPECT_NEAR(plan.points[0].y, 1.0, 1e-15);
  EXPECT_EQ(plan.points[4].x, 2.0);
  EXPECT_EQ(plan.points[4].y, 2.0);
  // OBB vertices
  EXPECT_NEAR(plan.points[1].x, 2.0, 1e-15);
  EXPECT_NEAR(plan.points[1].y, 0.0, 1e-15);
  EXPECT_NEAR(plan.points[5].x, 4.0, 1e-15);
  EXPECT_NEAR(plan.points[5].y, 2.0, 1e-15);
}

TEST(LsConv, VerticalEdgeBranch) {
  // s1 = 0 puts q1 on the HBB corner: q~0 slides down the left edge.
  const auto plan = ls::loc_sample_points(box_of({2, 2}, {2, 2, 2, 2}, {0, 2, 2, 2}), {0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(plan.points[0].x, 0.0, 1e-15);
  EXPECT_NEAR(plan.points[0].y, 1.0, 1e-15);
}

TEST(LsConv, SigmaLimitsHitSegmentEnds) {
  const auto box = box_of({10, 8}, {5, 7, 6, 4}, {3, 2, 5, 4});
  const auto q = gghl_key_points<double>(box.l, box.s, box.anchor);
  const auto lo = ls::loc_sample_points(box, {0, 0, 0, 0});
  const auto hi = ls::loc_sample_points(box, {1, 1, 1, 1});
  for (const auto& b : kBindings) {
    const Point p0 = lo.points[b.tap], p1 = hi.points[b.tap];
    const double d0a = std::hypot(p0.x - q[b.a].x, p0.y - q[b.a].y);
    const double d0b = std::hypot(p0.x - q[b.b].x, p0.y - q[b.b].y);
    const double d1a = std::hypot(p1.x - q[b.a].x, p1.y - q[b.a].y);
    const double d1b = std::hypot(p1.x - q[b.b].x, p1.y - q[b.b].y);
    EXPECT_LT(std::min(d0a, d0b), 1e-12) << b.tap;
    EXPECT_LT(std::min(d1a, d1b), 1e-12) << b.tap;
    EXPECT_GT(std::hypot(p0.x - p1.x, p0.y - p1.y), 1e-3) << b.tap;
  }
}

TEST(LsConv, SlidingPointsStayOnEdgesIncludingDegenerateGlides) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 2000; ++t) {
    const std::array<double, 4> l{1 + 10 * u(rng), 1 + 10 * u(rng), 1 + 10 * u(rng), 1 + 10 * u(rng)};
    const double w = l[1] + l[3], h = l[0] + l[2];
    std::array<double, 4> s{w * u(rng), h * u(rng), w * u(rng), h * u(rng)};
    // push some glides onto the range ends, where the vertical branches fire
    for (auto& v : s) {
      const double r = u(rng);
      if (r < 0.1) v = 0.0;
    }
    if (u(rng) < 0.1) s[2] = w;
    if (u(rng) < 0.1) s[0] = w;
    const auto box = box_of({20, 20}, l, s);
    const auto q = gghl_key_points<double>(l, s, box.anchor);
    const auto plan = ls::loc_sample_points(box, {u(rng), u(rng), u(rng), u(rng)});
    const Rect hbb{20 - l[3], 20 - l[0], 20 + l[1], 20 + l[2]};
    for (const auto& p : plan.points) {
      EXPECT_GE(p.x, hbb.x0 - 1e-9);
      EXPECT_LE(p.x, hbb.x1 + 1e-9);
      EXPECT_GE(p.y, hbb.y0 - 1e-9);
      EXPECT_LE(p.y, hbb.y1 + 1e-9);
    }
    for (const auto& b : kBindings) {
      EXPECT_LT(point_segment_distance(plan.points[b.tap], q[b.a], q[b.b]), 1e-9)
          << "tap " << b.tap << " trial " << t;
    }
  }
}

TEST(LsConv, RefineObb) {
  const auto box = box_of({5, 5}, {1, 2, 3, 4}, {1, 1, 2, 2});
  const auto same = ls::refine_obb(box, {1, 1, 1, 1}, {1, 1, 1, 1});
  EXPECT_EQ(same.l, box.l);
  EXPECT_EQ(same.s, box.s);
  const auto twice = ls::refine_obb(box, {2, 2, 2, 2}, {1, 1, 1, 1});
  for (int n = 0; n < 4; ++n) EXPECT_EQ(twice.l[n], 2 * box.l[n]);
  const auto clamped = ls::refine_obb(box, {1, 1, 1, 1}, {100, 100, 1, 1});
  EXPECT_EQ(clamped.s[0], box.l[1] + box.l[3]);
  EXPECT_EQ(clamped.s[1], box.l[0] + box.l[2]);
}

TEST(LsConv, EmptyPositivesMatchesPlainModulatedConv) {
  std::mt19937_64 rng(3);
  ad::Tape tape;
  const auto sce = tape.constant(ls::embed_coords(random_grid({6, 5, 2}, rng)));
  const auto kernel = tape.constant(random_grid({9, 4, 3}, rng));
  const auto m = tape.constant(random_grid({6, 5, 9}, rng, 0.1, 0.9));
  const PositionSet none(6, 5);
  const auto coords = ls::loc_plan_coords(tape.constant(random_grid({6, 5, 8}, rng, 1, 3)),
                                          tape.constant(random_grid({6, 5, 4}, rng, 0, 1)), none, 8.0);
  const auto a = ls::ls_conv_forward(sce, kernel, coords, m);
  const auto b = ad::deform_conv3x3(sce, kernel, tape.constant(ad::offset_coords(6, 5, ad::square_offsets())), m);
  EXPECT_EQ(a.value().data(), b.value().data());
}

TEST(LsConv, AllTapsAtAnchorReturnsAnchorFeature) {
  std::mt19937_64 rng(4);
  const FeatureGrid feat = random_grid({4, 4, 1}, rng);
  PositionSet pos(4, 4);
  pos.insert(2, 1);
  ls::LocSamplePlan plan;
  for (auto& p : plan.points) p = cell_anchor(2, 1, 8.0);
  const FeatureGrid coords = ls::assemble_loc_coords({{Cell{2, 1}, plan}}, pos, 8.0);
  FeatureGrid kernel({9, 1, 1}, 1.0 / 9.0);
  ad::Tape tape;
  const auto out = ls::ls_conv_forward(tape.constant(feat), tape.constant(kernel), tape.constant(coords),
                                       tape.constant(FeatureGrid({4, 4, 9}, 1.0)));
  EXPECT_NEAR(out.value().at(2, 1, 0), feat.at(2, 1, 0), 1e-15);
}

TEST(LsConv, PlanOutsidePositivesIsContractError) {
  PositionSet pos(4, 4);
  pos.insert(1, 1);
  EXPECT_THROW(ls::assemble_loc_coords({{Cell{2, 2}, ls::LocSamplePlan{}}}, pos, 8.0), ContractError);
  EXPECT_THROW(ls::assemble_loc_coords({}, pos, 8.0), ContractError);
}

TEST(LsConv, DifferentiablePlanMatchesValuePlan) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int w = 4, h = 3;
  FeatureGrid box({w, h, 8}), sigma({w, h, 4});
  PositionSet pos(w, h);
  std::vector<ls::CellLocPlan> plans;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      GghlBox b;
      b.anchor = cell_anchor(x, y, 8.0);
      for (int n = 0; n < 4; ++n) b.l[n] = 4 + 8 * u(rng);
      b.s = {(b.l[1] + b.l[3]) * u(rng), (b.l[0] + b.l[2]) * u(rng), (b.l[1] + b.l[3]) * u(rng),
             (b.l[0] + b.l[2]) * u(rng)};
      std::array<double, 4> sg{u(rng), u(rng), u(rng), u(rng)};
      for (int n = 0; n < 4; ++n) {
        box.at(x, y, n) = b.l[n];
        box.at(x, y, 4 + n) = b.s[n];
        sigma.at(x, y, n) = sg[n];
      }
      if ((x + y) % 2 == 0) {
        pos.insert(x, y);
        plans.push_back({Cell{x, y}, ls::loc_sample_points(b, sg)});
      }
    }
  }
  ad::Tape tape;
  const auto coords = ls::loc_plan_coords(tape.constant(box), tape.constant(sigma), pos, 8.0);
  const FeatureGrid ref = ls::assemble_loc_coords(plans, pos, 8.0);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(coords.value()[i], ref[i], 1e-12);
}

TEST(LsConvGrad, ThroughSigmaBoxAndFeatures) {
  std::mt19937_64 rng(6);
  const int w = 4, h = 4;
  FeatureGrid box({w, h, 8});
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int n = 0; n < 4; ++n) box.at(x, y, n) = 6 + 6 * u(rng);
      box.at(x, y, 4) = (box.at(x, y, 1) + box.at(x, y, 3)) * u(rng);
      box.at(x, y, 5) = (box.at(x, y, 0) + box.at(x, y, 2)) * u(rng);
      box.at(x, y, 6) = (box.at(x, y, 1) + box.at(x, y, 3)) * u(rng);
      box.at(x, y, 7) = (box.at(x, y, 0) + box.at(x, y, 2)) * u(rng);
    }
  }
  const FeatureGrid sigma = random_grid({w, h, 4}, rng, 0.2, 0.8);
  const FeatureGrid feat = random_grid({w, h, 2}, rng);
  const FeatureGrid kernel = random_grid({9, 4, 2}, rng);
  const FeatureGrid m = random_grid({w, h, 9}, rng, 0.2, 0.8);
  PositionSet pos(w, h);
  pos.insert(1, 1);
  pos.insert(2, 3);
  pos.insert(0, 2);
  const auto fn = [&](ad::Tape&, std::span<const ad::Var> x) {
    const auto coords = ls::loc_plan_coords(x[0], x[1], pos, 8.0);
    return ls::ls_conv_forward(ls::embed_coords(x[2]), x[3], coords, x[4]);
  };
  const auto r = grad_check(fn, {box, sigma, feat, kernel, m}, 24, 8);
  EXPECT_LT(r.max_rel, 1e-3);
}
