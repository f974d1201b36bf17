#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "porenet/porenet_model.hpp"

namespace {

std::vector<porenet::PorePatch> random_patches(int n) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<porenet::PorePatch> out(n);
  for (auto& p : out) {
    for (auto& v : p.pixels) v = u(rng);
  }
  return out;
}

void BM_Embed(benchmark::State& state) {
  auto model = porenet::build_porenet(1);
  model.mark_running_stats(true);
  const auto patches = random_patches(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(porenet::embed(model, patches));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Embed)->Arg(1)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainForwardBackward(benchmark::State& state) {
  auto model = porenet::build_porenet(1);
  const auto patches = random_patches(static_cast<int>(state.range(0)));
  const auto x = porenet::patches_to_tensor<float>(patches);
  for (auto _ : state) {
    model.zero_grad();
    auto y = model.forward(x, porenet::nn::Mode::kTrain);
    benchmark::DoNotOptimize(model.backward(y));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
