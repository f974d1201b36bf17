#include <benchmark/benchmark.h>

#include "porenet/daisy.hpp"
#include "porenet/pore_detect.hpp"
#include "porenet/synthetic.hpp"

namespace {

const porenet::SyntheticImpression& sample() {
  static const porenet::SyntheticDataset data = [] {
    porenet::SyntheticSpec spec;
    spec.fingers = 1;
    spec.impressions = 2;
    return porenet::make_synthetic_dataset(spec);
  }();
  return data.impressions.front();
}

void BM_DetectDpf(benchmark::State& state) {
  const auto& imp = sample();
  for (auto _ : state) benchmark::DoNotOptimize(porenet::detect_pores_dpf(imp.image));
}
BENCHMARK(BM_DetectDpf)->Unit(benchmark::kMillisecond);

void BM_DescribePores(benchmark::State& state) {
  const auto& imp = sample();
  for (auto _ : state) benchmark::DoNotOptimize(porenet::describe_pores(imp.image, imp.pores));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(imp.pores.pores.size()));
}
BENCHMARK(BM_DescribePores)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
