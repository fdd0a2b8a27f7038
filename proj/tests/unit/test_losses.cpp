#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tsconv/losses.hpp"

using namespace tsconv;
using namespace tsconv::loss;
using assign::AssignmentMap;
using assign::Tag;
using tsconv::testing::grad_check;
using tsconv::testing::random_grid;

namespace {

// Grid of 4 cells: positive, negative, soft negative, ignored.
AssignmentMap four_cell_map(double l_pos = 0.6, double d_sneg = 0.2) {
  AssignmentMap m(4, 1);
  m.tag = {Tag::kPositive, Tag::kNegative, Tag::kSoftNegative, Tag::kIgnored};
  m.l[0] = l_pos;
  m.d[2] = d_sneg;
  m.w_sneg[2] = 1.0 - d_sneg;
  return m;
}

FeatureGrid box_row(int w, const std::array<double, 9>& v) {
  FeatureGrid g({w, 1, 9});
  for (int x = 0; x < w; ++x) {
    for (int c = 0; c < 9; ++c) g.at(x, 0, c) = v[static_cast<std::size_t>(c)];
  }
  return g;
}

constexpr std::array<double, 9> kGt{4, 5, 6, 7, 3, 2, 4, 5, 0.7};

}  // namespace

TEST(Objectness, PerfectIsZero) {
  const auto m = four_cell_map();
  LevelTargets t{&m, {}, {}};
  ad::Tape tape;
  FeatureGrid obj({4, 1, 1}, 0.0);
  obj[0] = 0.6;
  obj[3] = 0.77;  // ignored
  const auto loss = objectness_loss(std::span(&t, 1), std::vector{tape.constant(obj)});
  EXPECT_NEAR(loss.scalar(), 0.0, 1e-12);
}

TEST(Objectness, HalfOnNegative) {
  AssignmentMap m(1, 1);
  LevelTargets t{&m, {}, {}};
  ad::Tape tape;
  const auto loss = objectness_loss(std::span(&t, 1), std::vector{tape.constant(FeatureGrid({1, 1, 1}, 0.5))});
  EXPECT_NEAR(loss.scalar(), 0.17328679513998632, 1e-15);
}

TEST(Objectness, SoftNegativeWeightRatio) {
  auto run = [](double d) {
    AssignmentMap m(1, 1);
    m.tag[0] = Tag::kSoftNegative;
    m.d[0] = d;
    m.w_sneg[0] = 1.0 - d;
    LevelTargets t{&m, {}, {}};
    ad::Tape tape;
    return objectness_loss(std::span(&t, 1), std::vector{tape.constant(FeatureGrid({1, 1, 1}, 0.4))}).scalar();
  };
  EXPECT_NEAR(run(0.0) / run(0.9), 10.0, 1e-9);
}

TEST(Objectness, IgnoredCellsGetNoGradient) {
  const auto m = four_cell_map();
  LevelTargets t{&m, {}, {}};
  ad::Tape tape;
  const auto obj = tape.leaf(FeatureGrid({4, 1, 1}, {0.3, 0.4, 0.5, 0.6}));
  tape.backward(objectness_loss(std::span(&t, 1), std::vector{obj}));
  const auto g = obj.grad();
  EXPECT_EQ(g[3], 0.0);
  EXPECT_NE(g[0], 0.0);
  EXPECT_NE(g[1], 0.0);
  EXPECT_NE(g[2], 0.0);
}

TEST(Objectness, NormalizationInvariantToDuplication) {
  const auto m1 = four_cell_map();
  AssignmentMap m2(8, 1);
  for (int i = 0; i < 8; ++i) {
    m2.tag[static_cast<std::size_t>(i)] = m1.tag[static_cast<std::size_t>(i % 4)];
    m2.l[static_cast<std::size_t>(i)] = m1.l[static_cast<std::size_t>(i % 4)];
    m2.w_sneg[static_cast<std::size_t>(i)] = m1.w_sneg[static_cast<std::size_t>(i % 4)];
  }
  const std::vector<double> p{0.3, 0.4, 0.5, 0.6};
  std::vector<double> p2 = p;
  p2.insert(p2.end(), p.begin(), p.end());
  LevelTargets t1{&m1, {}, {}}, t2{&m2, {}, {}};
  ad::Tape tape;
  const double a = objectness_loss(std::span(&t1, 1), std::vector{tape.constant(FeatureGrid({4, 1, 1}, p))}).scalar();
  const double b = objectness_loss(std::span(&t2, 1), std::vector{tape.constant(FeatureGrid({8, 1, 1}, p2))}).scalar();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(Objectness, NoPositivesIsFinite) {
  AssignmentMap m(2, 1);
  LevelTargets t{&m, {}, {}};
  ad::Tape tape;
  const auto v = objectness_loss(std::span(&t, 1), std::vector{tape.constant(FeatureGrid({2, 1, 1}, 0.1))}).scalar();
  EXPECT_TRUE(std::isfinite(v));
}

TEST(Localization, PerfectAndAdditive) {
  AssignmentMap m(1, 1);
  m.tag[0] = Tag::kPositive;
  LevelTargets t{&m, box_row(1, kGt), {}};
  ad::Tape tape;
  const auto gt = tape.constant(box_row(1, kGt));
  EXPECT_NEAR(localization_loss(std::span(&t, 1), std::vector{gt}, std::vector{gt}).scalar(), 0.0, 1e-15);

  auto off = kGt;
  off[8] = 0.7 + std::sqrt(0.2);  // box loss = 0.2 through the area-ratio term
  auto off2 = kGt;
  off2[8] = 0.7 - std::sqrt(0.1);
  const auto a = tape.constant(box_row(1, off)), b = tape.constant(box_row(1, off2));
  EXPECT_NEAR(localization_loss(std::span(&t, 1), std::vector{a}, std::vector{gt}).scalar(), 0.2, 1e-14);
  EXPECT_NEAR(localization_loss(std::span(&t, 1), std::vector{a}, std::vector{b}).scalar(), 0.3, 1e-14);
}

TEST(Localization, NoPositivesIsZero) {
  AssignmentMap m(2, 1);
  LevelTargets t{&m, box_row(2, kGt), {}};
  ad::Tape tape;
  const auto p = tape.constant(box_row(2, kGt));
  EXPECT_EQ(localization_loss(std::span(&t, 1), std::vector{p}, std::vector{p}).scalar(), 0.0);
}

TEST(Classification, Values) {
  AssignmentMap m(2, 1);
  m.tag[0] = Tag::kPositive;
  FeatureGrid target({2, 1, 3}, 0.0);
  target.at(0, 0, 1) = 1.0;
  LevelTargets t{&m, {}, target};
  ad::Tape tape;
  EXPECT_NEAR(classification_loss(std::span(&t, 1), std::vector{tape.constant(target)}).scalar(), 0.0, 1e-6);
  EXPECT_NEAR(classification_loss(std::span(&t, 1), std::vector{tape.constant(FeatureGrid({2, 1, 3}, 0.5))}).scalar(),
              2.0794415416798357, 1e-14);
  FeatureGrid wrong({2, 1, 3}, 0.0);
  wrong.at(0, 0, 0) = 1.0;
  const double capped = classification_loss(std::span(&t, 1), std::vector{tape.constant(wrong)}).scalar();
  EXPECT_NEAR(capped, -2.0 * std::log(kProbEps), 1e-6);
  AssignmentMap none(2, 1);
  LevelTargets tn{&none, {}, target};
  EXPECT_EQ(classification_loss(std::span(&tn, 1), std::vector{tape.constant(wrong)}).scalar(), 0.0);
}

TEST(Total, ExactSum) {
  ad::Tape tape;
  EXPECT_EQ(sum_terms(tape.scalar(0), tape.scalar(0), tape.scalar(0)).scalar(), 0.0);
  EXPECT_EQ(sum_terms(tape.scalar(1), tape.scalar(2), tape.scalar(3)).scalar(), 6.0);

  const auto m = four_cell_map();
  FeatureGrid cls({4, 1, 2}, 0.0);
  cls.at(0, 0, 0) = 1;
  LevelTargets t{&m, box_row(4, kGt), cls};
  std::mt19937_64 rng(1);
  LevelPreds p{tape.constant(random_grid({4, 1, 1}, rng, 0.1, 0.9)), tape.constant(box_row(4, kGt)),
               tape.constant(box_row(4, kGt)), tape.constant(random_grid({4, 1, 2}, rng, 0.1, 0.9))};
  const auto terms = total_loss(std::span(&t, 1), std::span(&p, 1));
  EXPECT_EQ(terms.report.total, terms.report.obj + terms.report.loc + terms.report.cls);
  EXPECT_EQ(terms.report.m_pos, 1);
  EXPECT_EQ(terms.report.m_neg, 1);
  EXPECT_EQ(terms.report.m_sneg, 1);
  EXPECT_GE(terms.report.obj, 0.0);
  EXPECT_GE(terms.report.cls, 0.0);
}

TEST(Total, ReportLineFormat) {
  LossReport r{0.5, 0.25, 0.125, 0.875, 3, 10, 2};
  EXPECT_EQ(r.line(7), "7\t0.5\t0.25\t0.125\t0.875\t3\t10\t2");
  EXPECT_EQ(LossReport::header(), "iter\tloss_obj\tloss_loc\tloss_cls\tloss_total\tm_pos\tm_neg\tm_sneg");
}

TEST(LossGrad, AllTerms) {
  std::mt19937_64 rng(5);
  const int w = 5, h = 2;
  AssignmentMap m(w, h);
  const Tag tags[] = {Tag::kPositive, Tag::kNegative, Tag::kSoftNegative, Tag::kIgnored, Tag::kPositive};
  for (std::size_t i = 0; i < m.cells(); ++i) {
    m.tag[i] = tags[i % 5];
    m.l[i] = 0.3 + 0.05 * static_cast<double>(i);
    m.w_sneg[i] = 0.6;
  }
  FeatureGrid gt({w, h, 9}), cls_t({w, h, 3}, 0.0);
  FeatureGrid init({w, h, 9}), refined({w, h, 9});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < w * h; ++i) {
    auto fill = [&](FeatureGrid& g, double jitter) {
      double* c = g.data().data() + i * 9;
      for (int n = 0; n < 4; ++n) c[n] = 4 + 4 * u(rng) + jitter;
      c[4] = (c[1] + c[3]) * (0.2 + 0.6 * u(rng));
      c[5] = (c[0] + c[2]) * (0.2 + 0.6 * u(rng));
      c[6] = (c[1] + c[3]) * (0.2 + 0.6 * u(rng));
      c[7] = (c[0] + c[2]) * (0.2 + 0.6 * u(rng));
      c[8] = 0.5 + 0.4 * u(rng);
    };
    fill(gt, 0);
    fill(init, 1);
    fill(refined, 2);
    cls_t[static_cast<std::size_t>(i * 3 + i % 3)] = 1.0;
  }
  LevelTargets t{&m, gt, cls_t};
  const FeatureGrid obj = random_grid({w, h, 1}, rng, 0.1, 0.9);
  const FeatureGrid cls = random_grid({w, h, 3}, rng, 0.1, 0.9);
  const auto fn = [&](ad::Tape&, std::span<const ad::Var> x) {
    LevelPreds p{x[0], x[1], x[2], x[3]};
    return total_loss(std::span(&t, 1), std::span(&p, 1)).total;
  };
  EXPECT_LT(grad_check(fn, {obj, init, refined, cls}, 20, 6).max_rel, 1e-3);
}
