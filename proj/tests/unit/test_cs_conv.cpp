#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "tsconv/cs_conv.hpp"

using namespace tsconv;
using tsconv::testing::grad_check;
using tsconv::testing::random_grid;

namespace {

cs::Kernel3x3 random_kernel(std::mt19937_64& rng, bool circular = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  cs::Kernel3x3 k;
  for (auto& v : k.k) v = u(rng);
  k.circular = circular;
  return k;
}

std::array<double, 8> simplex(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::array<double, 8> b{};
  double t = 0;
  for (auto& v : b) t += (v = u(rng));
  for (auto& v : b) v /= t;
  return b;
}

}  // namespace

TEST(CsConv, CornerWeightsAreConvex) {
  const auto w = cs::corner_weights();
  double sum = 0;
  for (double v : w) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], (std::numbers::sqrt2 - 1) / 2);
  EXPECT_DOUBLE_EQ(w[3], (3 - 2 * std::numbers::sqrt2) / 2);
}

TEST(CsConv, CircularizeExamples) {
  cs::Kernel3x3 ones;
  ones.k.fill(1.0);
  for (double v : cs::circularize(ones).k) EXPECT_NEAR(v, 1.0, 1e-15);

  cs::Kernel3x3 corner;
  corner.k[0] = 1.0;
  const auto c = cs::circularize(corner);
  EXPECT_DOUBLE_EQ(c.k[0], 0.5);
  EXPECT_DOUBLE_EQ(c.k[2], 0.0);
  EXPECT_DOUBLE_EQ(c.k[6], 0.0);
  EXPECT_DOUBLE_EQ(c.k[8], 0.0);
  for (int t : {1, 3, 4, 5, 7}) EXPECT_DOUBLE_EQ(c.k[t], 0.0);
  EXPECT_TRUE(c.circular);

  for (double v : cs::circularize(cs::Kernel3x3{}).k) EXPECT_EQ(v, 0.0);
}

TEST(CsConv, CircularizeKeepsEdgesAndCenter) {
  std::mt19937_64 rng(1);
  const auto k = random_kernel(rng);
  const auto c = cs::circularize(k);
  for (int t : {1, 3, 4, 5, 7}) EXPECT_EQ(c.k[t], k.k[t]);
}

TEST(CsConv, CircularizeIsLinear) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_kernel(rng), b = random_kernel(rng);
    const double x = u(rng), y = u(rng);
    cs::Kernel3x3 mix;
    for (int i = 0; i < 9; ++i) mix.k[i] = x * a.k[i] + y * b.k[i];
    const auto lhs = cs::circularize(mix);
    const auto ca = cs::circularize(a), cb = cs::circularize(b);
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(lhs.k[i], x * ca.k[i] + y * cb.k[i], 1e-12);
  }
}

TEST(CsConv, RotateKernelRing) {
  cs::Kernel3x3 top;
  top.k[1] = 1.0;
  const auto r = cs::rotate_kernel(top, 2);
  for (int t = 0; t < 9; ++t) EXPECT_EQ(r.k[t], t == 5 ? 1.0 : 0.0);

  std::mt19937_64 rng(3);
  const auto k = cs::circularize(random_kernel(rng));
  EXPECT_EQ(cs::rotate_kernel(k, 0), k);
  auto acc = k;
  for (int i = 0; i < 8; ++i) acc = cs::rotate_kernel(acc, 1);
  EXPECT_EQ(acc, k);
  EXPECT_THROW(cs::rotate_kernel(random_kernel(rng), 3), ContractError);
  EXPECT_NO_THROW(cs::rotate_kernel(random_kernel(rng), 4));
}

TEST(CsConv, RotationComposesAsZ8) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto k = cs::circularize(random_kernel(rng));
    for (int a = 0; a < 8; ++a) {
      for (int b = 0; b < 8; ++b) {
        EXPECT_EQ(cs::rotate_kernel(cs::rotate_kernel(k, a), b), cs::rotate_kernel(k, (a + b) % 8));
      }
    }
  }
}

TEST(CsConv, FuseEndpoints) {
  std::mt19937_64 rng(5);
  const auto sq = random_kernel(rng);
  const auto circ = cs::circularize(sq);
  for (int k : {0, 2, 4, 6}) {
    const auto sr = cs::rotate_kernel(sq, k), cr = cs::rotate_kernel(circ, k);
    std::array<double, 4> one{}, zero{};
    one[k / 2] = 1.0;
    for (auto& v : zero) v = 0.0;
    EXPECT_EQ(cs::fuse_kernels(sr, cr, one, k).k, cr.k);
    EXPECT_EQ(cs::fuse_kernels(sr, cr, zero, k).k, sr.k);
  }
  for (int k : {1, 3, 5, 7}) {
    const auto cr = cs::rotate_kernel(circ, k);
    EXPECT_EQ(cs::fuse_kernels(cr, cr, {0.1, 0.2, 0.3, 0.4}, k).k, cs::fuse_kernels(cr, cr, {0.9, 0.8, 0.7, 0.6}, k).k);
  }
}

TEST(CsConv, BankNormalizesBeta) {
  std::mt19937_64 rng(6);
  const auto bank = cs::DckBank::build(random_kernel(rng), {0.5, 0.5, 0.5, 0.5}, {1, 2, 3, 4, 5, 6, 7, 8});
  double s = 0;
  for (double b : bank.beta) s += b;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(cs::DckBank::build(random_kernel(rng), {0.5, 0.5, 0.5, 0.5}, {}), ContractError);
  EXPECT_THROW(cs::DckBank::build(random_kernel(rng), {0.5, 0.5, 0.5, 0.5}, {-1, 2, 0, 0, 0, 0, 0, 0}),
               ContractError);
}

TEST(CsConv, ClsSamplePoints) {
  MERect r;
  r.center = {10, 6};
  r.long_side = 8;
  r.short_side = 4;
  r.angle = 0.0;
  std::array<double, 18> omega;
  omega.fill(0.5);
  omega[2] = 1.0;  // tap 1 to the mid-right edge
  const auto plan = cs::cls_sample_points(r, omega);
  EXPECT_NEAR(plan.points[0].x, 10, 1e-15);
  EXPECT_NEAR(plan.points[0].y, 6, 1e-15);
  EXPECT_NEAR(plan.points[1].x, 14, 1e-15);
  EXPECT_NEAR(plan.points[1].y, 6, 1e-15);
}

TEST(CsConv, ClsSamplePointsInsideRotatedRect) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    MERect r;
    r.center = {50 * u(rng), 50 * u(rng)};
    r.long_side = 1 + 30 * u(rng);
    r.short_side = 1 + r.long_side * u(rng);
    r.angle = std::numbers::pi * u(rng);
    std::array<double, 18> omega;
    for (auto& v : omega) v = u(rng);
    const auto plan = cs::cls_sample_points(r, omega);
    const auto poly = r.corners();
    for (const auto& p : plan.points) EXPECT_LT(polygon_membership(poly.v, p), 1e-9);
  }
}

TEST(CsConv, FoldedKernelMatchesEightOrientationSum) {
  std::mt19937_64 rng(8);
  const int w = 5, h = 4, cin = 2, cout = 3;
  const FeatureGrid in = random_grid({w, h, cin}, rng);
  const FeatureGrid K = random_grid({9, cin, cout}, rng);
  const FeatureGrid m = random_grid({w, h, 9}, rng, 0.2, 0.9);
  FeatureGrid lam({1, 1, 4}), bet({1, 1, 8});
  const auto b = simplex(rng);
  for (int k = 0; k < 8; ++k) bet[static_cast<std::size_t>(k)] = b[k];
  for (int j = 0; j < 4; ++j) lam[static_cast<std::size_t>(j)] = 0.2 + 0.2 * j;
  FeatureGrid coords = ad::offset_coords(w, h, ad::circular_offsets());
  std::uniform_real_distribution<double> jit(-0.4, 0.4);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (i % 36 < 18) coords[i] += jit(rng);
  }

  ad::Tape tape;
  const auto out = cs::cs_conv_forward(tape.constant(in), tape.constant(K), tape.constant(lam), tape.constant(bet),
                                       tape.constant(coords), tape.constant(m));
  FeatureGrid expect({w, h, cout}, 0.0);
  for (int k = 0; k < 8; ++k) {
    FeatureGrid Kk({9, cin, cout});
    for (int ci = 0; ci < cin; ++ci) {
      for (int co = 0; co < cout; ++co) {
        cs::Kernel3x3 sq;
        for (int t = 0; t < 9; ++t) sq.k[t] = K.at(t, ci, co);
        const auto bank = cs::DckBank::build(sq, {lam[0], lam[1], lam[2], lam[3]}, b);
        for (int t = 0; t < 9; ++t) Kk.at(t, ci, co) = bank.fused[k].k[t];
      }
    }
    const auto part = ad::deform_conv3x3(tape.constant(in), tape.constant(Kk), tape.constant(coords), tape.constant(m));
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += b[k] * part.value()[i];
  }
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(out.value()[i], expect[i], 1e-12);
}

TEST(CsConv, SingleOrientationCollapsesToPlainConvOnEdgeTaps) {
  std::mt19937_64 rng(9);
  const int w = 5, h = 5;
  const FeatureGrid in = random_grid({w, h, 1}, rng);
  FeatureGrid K({9, 1, 1}, 0.0);
  for (int t : {1, 3, 4, 5, 7}) K[static_cast<std::size_t>(t)] = 0.3 * t - 1.0;
  FeatureGrid lam({1, 1, 4}, 0.0), bet({1, 1, 8}, 0.0);
  bet[0] = 1.0;
  ad::Tape tape;
  const auto out = cs::cs_conv_forward(tape.constant(in), tape.constant(K), tape.constant(lam), tape.constant(bet),
                                       tape.constant(ad::offset_coords(w, h, ad::circular_offsets())),
                                       tape.constant(FeatureGrid({w, h, 9}, 1.0)));
  const auto plain = ad::conv2d(tape.constant(in), tape.constant(K), ad::Var{}, 3, 1);
  for (std::size_t i = 0; i < plain.value().size(); ++i) EXPECT_NEAR(out.value()[i], plain.value()[i], 1e-14);
}

TEST(CsConv, ConstantFieldInvariantToBeta) {
  std::mt19937_64 rng(10);
  const int w = 6, h = 6;
  const FeatureGrid in({w, h, 1}, 2.0);
  // a flat kernel is fixed by circularization and rotation
  const FeatureGrid K({9, 1, 1}, 0.7);
  const FeatureGrid m = random_grid({w, h, 9}, rng, 0.2, 0.9);
  FeatureGrid lam({1, 1, 4});
  for (auto& v : lam.data()) v = 0.3;
  const auto coords = ad::offset_coords(w, h, ad::circular_offsets());
  std::vector<double> first;
  for (int trial = 0; trial < 5; ++trial) {
    FeatureGrid bet({1, 1, 8});
    const auto b = simplex(rng);
    for (int k = 0; k < 8; ++k) bet[static_cast<std::size_t>(k)] = b[k];
    ad::Tape tape;
    const auto out = cs::cs_conv_forward(tape.constant(in), tape.constant(K), tape.constant(lam), tape.constant(bet),
                                         tape.constant(coords), tape.constant(m));
    // interior cells only: border taps read the zero padding
    std::vector<double> v;
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x) {
        v.push_back(out.value().at(x, y, 0));
        double msum = 0.0;
        for (int j = 0; j < 9; ++j) msum += m.at(x, y, j);
        EXPECT_NEAR(v.back(), 2.0 * 0.7 * msum, 1e-12);
      }
    }
    if (trial == 0) {
      first = v;
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], first[i], 1e-12);
    }
  }
}

TEST(CsConv, AssembleRejectsForeignPlan) {
  PositionSet pos(3, 3);
  pos.insert(0, 0);
  EXPECT_THROW(cs::assemble_cls_coords({{Cell{1, 1}, cs::ClsSamplePlan{}}}, pos, 8.0), ContractError);
}

TEST(CsConvGrad, KernelLambdaBetaOmega) {
  std::mt19937_64 rng(11);
  const int w = 4, h = 4, cin = 2, cout = 2;
  const FeatureGrid in = random_grid({w, h, cin}, rng);
  const FeatureGrid K = random_grid({9, cin, cout}, rng);
  const FeatureGrid lam = random_grid({1, 1, 4}, rng, 0.2, 0.8);
  const FeatureGrid bet = random_grid({1, 1, 8}, rng, -1, 1);
  const FeatureGrid omega = random_grid({w, h, 18}, rng, 0.1, 0.9);
  const FeatureGrid m = random_grid({w, h, 9}, rng, 0.2, 0.8);
  FeatureGrid merects({w, h, 5});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PositionSet pos(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point c = cell_anchor(x, y, 8.0);
      merects.at(x, y, 0) = c.x + 2 * u(rng);
      merects.at(x, y, 1) = c.y - 2 * u(rng);
      merects.at(x, y, 2) = 10 + 8 * u(rng);
      merects.at(x, y, 3) = 4 + 4 * u(rng);
      merects.at(x, y, 4) = std::numbers::pi * u(rng);
      if ((x * 3 + y) % 3 == 0) pos.insert(x, y);
    }
  }
  const auto fn = [&](ad::Tape&, std::span<const ad::Var> v) {
    const auto coords = cs::cls_plan_coords(v[4], merects, pos, 8.0);
    return cs::cs_conv_forward(v[0], v[1], v[2], ad::softmax_channels(v[3]), coords, v[5]);
  };
  const auto r = grad_check(fn, {in, K, lam, bet, omega, m}, 20, 12);
  EXPECT_LT(r.max_rel, 1e-3);
}
