#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tsconv/label_assign.hpp"

using namespace tsconv;
using namespace tsconv::assign;

namespace {

MERect rect(Point c, double s1, double s2, double a) {
  MERect r;
  r.center = c;
  r.long_side = s1;
  r.short_side = s2;
  r.angle = a;
  return r;
}

ObjectEvidence evidence(const GaussianField& g, double loc, double cls) {
  ObjectEvidence e;
  e.field = &g;
  e.loc = FeatureGrid({g.width(), g.height(), 1}, loc);
  e.cls = FeatureGrid({g.width(), g.height(), 1}, cls);
  return e;
}

}  // namespace

TEST(Gaussian, CenterAndAxisValues) {
  const auto r = rect({20, 12}, 10, 4, 0.0);
  EXPECT_EQ(gaussian_score(r, r.center), 1.0);
  EXPECT_NEAR(gaussian_score(r, {25, 12}), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(gaussian_score(r, {20, 14}), std::exp(-0.5), 1e-15);
}

TEST(Gaussian, MatchesCovarianceFormReference) {
  // exp(-1/2 d^T C^-1 d) evaluated with an explicit covariance matrix.
  const auto r = rect({20, 14}, 16, 6, 0.6);
  EXPECT_NEAR(gaussian_score(r, {22, 17}), 0.8284886315374422, 1e-14);
  EXPECT_NEAR(gaussian_score(r, {15, 10}), 0.7180421816453401, 1e-14);
  EXPECT_NEAR(gaussian_score(r, {28, 18}), 0.4987890465651757, 1e-14);
}

TEST(Gaussian, MonotoneAlongAxes) {
  const auto r = rect({30, 30}, 20, 8, 1.1);
  const Point u{std::cos(r.angle), std::sin(r.angle)}, v{-u.y, u.x};
  double prev_u = 2, prev_v = 2;
  for (int i = 0; i < 50; ++i) {
    const double t = 0.5 * i;
    const double fu = gaussian_score(r, r.center + t * u);
    const double fv = gaussian_score(r, r.center + t * v);
    EXPECT_LT(fu, prev_u);
    EXPECT_LT(fv, prev_v);
    prev_u = fu;
    prev_v = fv;
  }
}

TEST(Gaussian, RotationEquivariance) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const auto r = rect({40 * u(rng), 40 * u(rng)}, 5 + 20 * u(rng), 2 + 5 * u(rng), std::numbers::pi * u(rng));
    const double phi = 2 * std::numbers::pi * u(rng);
    auto rotate = [&](Point p) {
      const Point d = p - r.center;
      return Point{r.center.x + std::cos(phi) * d.x - std::sin(phi) * d.y,
                   r.center.y + std::sin(phi) * d.x + std::cos(phi) * d.y};
    };
    auto rr = r;
    rr.angle = r.angle + phi;
    for (int k = 0; k < 10; ++k) {
      const Point p{r.center.x + 20 * (u(rng) - 0.5), r.center.y + 20 * (u(rng) - 0.5)};
      EXPECT_NEAR(gaussian_score(rr, rotate(p)), gaussian_score(r, p), 1e-9);
    }
  }
}

TEST(Gaussian, FieldSupportAndForcedCenter) {
  const auto g = gaussian_field(rect({20, 20}, 16, 8, 0.3), 8, 8, 8.0);
  for (int c : g.support) EXPECT_GT(g.at(c), kDefaultSupportFloor);
  EXPECT_FALSE(g.forced_center);
  // a tiny object between anchors
  const auto tiny = gaussian_field(rect({15, 15}, 1, 0.5, 0.0), 4, 4, 8.0, kDefaultSupportFloor, 0.3);
  EXPECT_TRUE(tiny.forced_center);
  EXPECT_EQ(tiny.score.at(1, 1, 0), 1.0);
  EXPECT_THROW(gaussian_field(rect({1, 1}, 0, 1, 0), 2, 2, 8.0), DegenerateBox);
}

TEST(LocScore, PerfectAndHandCase) {
  GghlBox gt;
  gt.l = {4, 5, 6, 7};
  gt.s = {3, 2, 4, 5};
  gt.area_ratio = 0.7;
  const auto same = loc_score(gt, gt);
  EXPECT_DOUBLE_EQ(same.loss, 0.0);
  EXPECT_DOUBLE_EQ(same.score, 1.0);

  // identical HBB, every glide ratio off by 0.5 (mean square 0.25), area ratio off by 0.1
  GghlBox pred = gt;
  const double w = gt.l[1] + gt.l[3], h = gt.l[0] + gt.l[2];
  pred.s = {gt.s[0] + 0.5 * w, gt.s[1] - 0.5 * h, gt.s[2] + 0.5 * w, gt.s[3] - 0.5 * h};
  pred.area_ratio = 0.8;
  const auto hand = loc_score(pred, gt);
  EXPECT_NEAR(hand.loss, 0.26, 1e-12);
  EXPECT_NEAR(hand.score, std::exp(-0.26), 1e-12);

  // disjoint HBBs: GIoU <= 0 so the loss is at least 1
  GghlBox far = gt;
  far.l = {-100, 110, 120, -100};
  EXPECT_GE(loc_score(far, gt).loss, 1.0);
  EXPECT_LE(loc_score(far, gt).score, std::exp(-1.0));
}

TEST(CombinedScore, ScheduleEndpoints) {
  EXPECT_DOUBLE_EQ(scheduled_theta(0.3, 0, 100), 0.3);
  EXPECT_DOUBLE_EQ(scheduled_theta(0.3, 100, 100), 0.0);
  EXPECT_NEAR(scheduled_theta(0.3, 25, 100), 0.225, 1e-15);
  EXPECT_DOUBLE_EQ(combined_score(0.7, 0.64, 0.25, 100, 100, 0.3), 0.4);
  EXPECT_NEAR(combined_score(1.0, 0.64, 0.25, 0, 100, 0.3), 0.3 + 0.7 * 0.4, 1e-15);
  EXPECT_EQ(combined_score(0.9, 0.9, 0.9, 3, 10, 0.3, false), 0.0);
}

TEST(Dtla, SingleCandidateWithUnitL) {
  GaussianField g;
  g.score = FeatureGrid({3, 1, 1}, 0.0);
  g.score[1] = 0.8;
  g.support = {1};
  auto ev = evidence(g, 0.0, 0.5);
  ev.loc[1] = 1.0;
  const auto map = assign_dtla(std::span(&ev, 1), 3, 1, DtlaParams{});
  EXPECT_EQ(map.p[0], 1);
  EXPECT_EQ(map.tag[1], Tag::kPositive);
  EXPECT_EQ(map.tag[0], Tag::kNegative);
}

TEST(Dtla, TinyLocalizationStillYieldsOnePositive) {
  const auto g = gaussian_field(rect({16, 16}, 24, 16, 0.2), 4, 4, 8.0);
  const auto ev = evidence(g, 1e-9, 0.5);
  const auto map = assign_dtla(std::span(&ev, 1), 4, 4, DtlaParams{});
  EXPECT_EQ(map.p[0], 1);
  EXPECT_EQ(map.count(Tag::kPositive), 1u);
}

TEST(Dtla, CandidateOutsideTopPIsIgnored) {
  GaussianField g;
  g.score = FeatureGrid({2, 1, 1}, 0.0);
  g.score[0] = 0.9;
  g.score[1] = 0.5;
  g.support = {0, 1};
  auto ev = evidence(g, 0.3, 0.5);  // sum L = 0.6 -> P = 1
  const auto map = assign_dtla(std::span(&ev, 1), 2, 1, DtlaParams{});
  EXPECT_EQ(map.p[0], 1);
  EXPECT_EQ(map.tag[0], Tag::kPositive);
  EXPECT_EQ(map.tag[1], Tag::kIgnored);
}

TEST(Dtla, SoftNegativesCarryOneMinusD) {
  GaussianField g;
  g.score = FeatureGrid({3, 1, 1}, 0.0);
  g.score[0] = 0.9;
  g.score[1] = 0.2;
  g.score[2] = 0.25;
  g.support = {0, 1, 2};
  auto ev = evidence(g, 0.04, 0.01);
  ev.loc[2] = 1.0;
  ev.cls[2] = 1.0;  // D = 0.3*0.25 + 0.7 = 0.775 >= T -> ignored
  const auto map = assign_dtla(std::span(&ev, 1), 3, 1, DtlaParams{});
  EXPECT_EQ(map.tag[1], Tag::kSoftNegative);
  EXPECT_DOUBLE_EQ(map.w_sneg[1], 1.0 - map.d[1]);
  EXPECT_EQ(map.tag[2], Tag::kIgnored);
}

TEST(Dtla, OverlapGoesToLargerD) {
  const auto a = gaussian_field(rect({16, 16}, 20, 12, 0.0), 4, 4, 8.0);
  const auto b = gaussian_field(rect({20, 16}, 20, 12, 0.0), 4, 4, 8.0);
  std::vector<ObjectEvidence> ev{evidence(a, 0.2, 0.2), evidence(b, 0.9, 0.9)};
  const auto map = assign_dtla(ev, 4, 4, DtlaParams{});
  for (int c : a.support) {
    if (std::find(b.support.begin(), b.support.end(), c) != b.support.end()) {
      EXPECT_EQ(map.owner[static_cast<std::size_t>(c)], 1);
    }
  }
}

TEST(Dtla, InvariantsOnRandomAssignments) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const int w = 8, h = 8;
    const int n = 1 + static_cast<int>(u(rng) * 3);
    std::vector<GaussianField> fields;
    for (int o = 0; o < n; ++o) {
      fields.push_back(gaussian_field(rect({64 * u(rng), 64 * u(rng)}, 8 + 24 * u(rng), 4 + 8 * u(rng),
                                           std::numbers::pi * u(rng)),
                                      w, h, 8.0));
    }
    std::vector<ObjectEvidence> ev;
    for (const auto& f : fields) {
      ObjectEvidence e;
      e.field = &f;
      e.loc = FeatureGrid({w, h, 1});
      e.cls = FeatureGrid({w, h, 1});
      for (auto& v : e.loc.data()) v = u(rng);
      for (auto& v : e.cls.data()) v = u(rng);
      ev.push_back(std::move(e));
    }
    DtlaParams params;
    params.iter = t % 2 == 0 ? 10 : 0;
    params.iter_max = 10;
    const auto map = assign_dtla(ev, w, h, params);
    const std::size_t total = map.count(Tag::kPositive) + map.count(Tag::kNegative) +
                              map.count(Tag::kSoftNegative) + map.count(Tag::kIgnored);
    EXPECT_EQ(total, static_cast<std::size_t>(w * h));
    for (int o = 0; o < n; ++o) {
      int pos = 0;
      bool any_candidate = false;
      double loc_sum = 0;
      for (std::size_t i = 0; i < map.cells(); ++i) {
        if (map.owner[i] != o) continue;
        loc_sum += ev[static_cast<std::size_t>(o)].loc[i];
        if (map.f[i] > params.threshold) any_candidate = true;
        if (map.tag[i] == Tag::kPositive) {
          ++pos;
          EXPECT_GT(map.f[i], params.threshold);
        }
      }
      EXPECT_EQ(map.p[static_cast<std::size_t>(o)], std::max(1, static_cast<int>(std::ceil(loc_sum))));
      EXPECT_LE(pos, map.p[static_cast<std::size_t>(o)]);
      if (any_candidate) EXPECT_GE(pos, 1);
    }
    for (std::size_t i = 0; i < map.cells(); ++i) {
      if (map.tag[i] == Tag::kSoftNegative) {
        EXPECT_LE(map.f[i], params.threshold);
        EXPECT_LT(map.d[i], params.threshold);
        EXPECT_EQ(map.w_sneg[i], 1.0 - map.d[i]);
      }
    }
  }
}

TEST(Dtla, LocalizationEqualsPriorReducesToStaticRanking) {
  const auto g = gaussian_field(rect({30, 26}, 28, 12, 0.4), 8, 8, 8.0);
  ObjectEvidence ev;
  ev.field = &g;
  ev.loc = g.score;
  ev.cls = g.score;
  const auto map = assign_dtla(std::span(&ev, 1), 8, 8, DtlaParams{});
  const GaussianField* fp = &g;
  const auto st = assign_gghl_static(std::span(&fp, 1), 8, 8, 0.3);
  int best = -1;
  for (int c : g.support) {
    if (best < 0 || g.at(c) > g.at(best)) best = c;
  }
  EXPECT_EQ(map.tag[static_cast<std::size_t>(best)], Tag::kPositive);
  EXPECT_EQ(st.tag[static_cast<std::size_t>(best)], Tag::kPositive);
  for (std::size_t i = 0; i < map.cells(); ++i) {
    if (map.tag[i] == Tag::kPositive) EXPECT_EQ(st.tag[i], Tag::kPositive);
  }
}

TEST(Static, ThresholdAndEmpty) {
  const auto g = gaussian_field(rect({16, 16}, 20, 14, 0.0), 4, 4, 8.0);
  const GaussianField* fp = &g;
  const auto map = assign_gghl_static(std::span(&fp, 1), 4, 4, 0.3);
  for (std::size_t i = 0; i < map.cells(); ++i) {
    const double f = g.score[i];
    EXPECT_EQ(map.tag[i] == Tag::kPositive, f > 0.3 && f > kDefaultSupportFloor);
    if (map.tag[i] == Tag::kPositive) EXPECT_EQ(map.l[i], f);
  }
  const auto empty = assign_gghl_static(std::span<const GaussianField* const>{}, 4, 4, 0.3);
  EXPECT_EQ(empty.count(Tag::kNegative), 16u);
}

TEST(AssignmentMap, CsvHasOneRowPerCell) {
  AssignmentMap m(3, 2);
  const std::string csv = m.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv.rfind("x,y,tag,F,L,D,w\n", 0), 0u);
}
