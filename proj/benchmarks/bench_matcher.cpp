#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "porenet/matcher.hpp"
#include "porenet/porenet_model.hpp"

namespace {

porenet::DescriptorSet random_unit_set(int n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  porenet::DescriptorSet s("bench", dim, {});
  std::vector<float> row(dim);
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (auto& v : row) {
      v = g(rng);
      norm += static_cast<double>(v) * v;
    }
    for (auto& v : row) v = static_cast<float>(v / std::sqrt(norm));
    s.push_back(row);
  }
  return s;
}

// Pores per side x descriptor dimension.
void BM_MatchScore(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = static_cast<int>(state.range(1));
  const auto a = random_unit_set(n, dim, 1);
  const auto b = random_unit_set(n, dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(porenet::match_score(a, b));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MatchScore)
    ->Args({100, 128})
    ->Args({300, 128})
    ->Args({100, porenet::kEmbeddingDim})
    ->Args({300, porenet::kEmbeddingDim})
    ->Unit(benchmark::kMillisecond);

void BM_NearestNeighbors(benchmark::State& state) {
  const auto a = random_unit_set(300, porenet::kEmbeddingDim, 3);
  const auto b = random_unit_set(300, porenet::kEmbeddingDim, 4);
  for (auto _ : state) benchmark::DoNotOptimize(porenet::nearest_neighbors(a, b));
}
BENCHMARK(BM_NearestNeighbors)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
