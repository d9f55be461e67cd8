// SPDX-License-Identifier: Apache-2.0

#include "varkit/feature_space.hpp"
#include "varkit/metrics.hpp"
#include "varkit/mil.hpp"
#include "varkit/temporal.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace varkit;

ag::Matrix gaussian(ag::Index rows, ag::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  ag::Matrix m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// One bag at the published shape (S=32, F=16) and the given width.
void BM_TemporalForward(benchmark::State& state) {
  AxialConfig c;
  c.embed_dim = static_cast<std::size_t>(state.range(0));
  const TemporalModel m(c, 512, 32, 16, 1);
  const ag::Var x(gaussian(32 * 16, 512, 2));
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, 1).value().data());
}
BENCHMARK(BM_TemporalForward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TemporalBackward(benchmark::State& state) {
  AxialConfig c;
  c.embed_dim = 128;
  const TemporalModel m(c, 32, 8, 4, 1);
  const ag::Matrix x = gaussian(8 * 8 * 4, 32, 3);
  for (auto _ : state) {
    for (const auto& p : m.parameters()) {
      ag::Var v = p.var;
      v.zero_grad();
    }
    ag::backward(ag::sum(m.forward(ag::Var(x), 8)));
  }
}
BENCHMARK(BM_TemporalBackward)->Unit(benchmark::kMillisecond);

void BM_SelectSegments(benchmark::State& state) {
  const auto s = state.range(0);
  const ag::Matrix v = gaussian(s, 1, 4);
  const std::vector<double> values(v.data(), v.data() + v.size());
  for (auto _ : state) benchmark::DoNotOptimize(select_segments(values, 3));
}
BENCHMARK(BM_SelectSegments)->Arg(32)->Arg(256);

void BM_SelectorFrame(benchmark::State& state) {
  const ag::Var x(gaussian(64 * 32 * 16, 512, 5));
  const DirectionBank dirs{ag::Var(gaussian(13, 512, 6)), {}};
  auto norm = ProjectionNormalizer::create(13);
  for (auto _ : state) benchmark::DoNotOptimize(selector_frame(x, dirs, norm, Mode::kTrain).value().data());
}
BENCHMARK(BM_SelectorFrame)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  const auto n = state.range(0);
  const ag::Matrix s = gaussian(n, 1, 7);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 7 == 0 ? 1 : 0;
  const std::vector<double> scores(s.data(), s.data() + s.size());
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(scores, y));
}
BENCHMARK(BM_RocAuc)->Arg(10000)->Arg(1000000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
