#include <benchmark/benchmark.h>

#include <numbers>
#include <random>

#include "tsconv/cs_conv.hpp"
#include "tsconv/label_assign.hpp"
#include "tsconv/model.hpp"
#include "tsconv/postprocess.hpp"

using namespace tsconv;

namespace {

FeatureGrid random_grid(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FeatureGrid g(s);
  for (auto& v : g.data()) v = u(rng);
  return g;
}

Polygon4 random_rect(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MERect r;
  r.center = {50 + 10 * u(rng), 50 + 10 * u(rng)};
  r.long_side = 5 + 20 * u(rng);
  r.short_side = 2 + 5 * u(rng);
  r.angle = std::numbers::pi * u(rng);
  return r.corners();
}

void BM_Conv3x3(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const FeatureGrid in = random_grid({n, n, 16}, 1), w = random_grid({9, 16, 16}, 2), b({1, 1, 16});
  for (auto _ : state) {
    ad::Tape tape;
    benchmark::DoNotOptimize(ad::conv2d(tape.constant(in), tape.constant(w), tape.constant(b), 3, 1).value()[0]);
  }
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(16)->Arg(32);

void BM_DeformConvForwardBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const FeatureGrid in = random_grid({n, n, 16}, 3), w = random_grid({9, 16, 16}, 4);
  FeatureGrid coords = ad::offset_coords(n, n, ad::circular_offsets());
  const FeatureGrid m({n, n, 9}, 1.0);
  for (auto _ : state) {
    ad::Tape tape;
    const auto x = tape.leaf(in);
    const auto out = ad::deform_conv3x3(x, tape.leaf(w), tape.constant(coords), tape.constant(m));
    tape.backward(ad::sum(out));
    benchmark::DoNotOptimize(x.grad()[0]);
  }
}
BENCHMARK(BM_DeformConvForwardBackward)->Arg(8)->Arg(16);

void BM_PolygonIou(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::vector<Polygon4> polys;
  for (int i = 0; i < 256; ++i) polys.push_back(random_rect(rng));
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(iou_polygon(polys[i % 256], polys[(i * 7 + 1) % 256]));
    ++i;
  }
}
BENCHMARK(BM_PolygonIou);

void BM_RotatedNms(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Detection> dets;
  for (int i = 0; i < state.range(0); ++i) dets.push_back({random_rect(rng), i % 3, u(rng)});
  for (auto _ : state) benchmark::DoNotOptimize(nms_rotated(dets, 0.4).size());
}
BENCHMARK(BM_RotatedNms)->Arg(100)->Arg(1000);

void BM_GaussianField(benchmark::State& state) {
  MERect r;
  r.center = {100, 80};
  r.long_side = 60;
  r.short_side = 20;
  r.angle = 0.7;
  for (auto _ : state) benchmark::DoNotOptimize(assign::gaussian_field(r, 32, 32, 8.0).support.size());
}
BENCHMARK(BM_GaussianField);

void BM_DckEffectiveKernel(benchmark::State& state) {
  const FeatureGrid k = random_grid({9, 16, 16}, 7), lam({1, 1, 4}, 0.5), beta({1, 1, 8}, 0.125);
  for (auto _ : state) {
    ad::Tape tape;
    benchmark::DoNotOptimize(
        cs::dck_effective_kernel(tape.constant(k), tape.constant(lam), tape.constant(beta)).value()[0]);
  }
}
BENCHMARK(BM_DckEffectiveKernel);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.head = state.range(0) == 0 ? HeadKind::kTsConv : HeadKind::kPlain;
  const TsConvModel model(cfg, 1);
  const FeatureGrid img = random_grid({64, 64, 3}, 8);
  for (auto _ : state) {
    ad::Tape tape;
    const auto bound = model.bind(tape, false);
    benchmark::DoNotOptimize(model.forward(tape, bound, img)[0].obj.value()[0]);
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1);

}  // namespace
BENCHMARK_MAIN();
