#include <benchmark/benchmark.h>

#include <vector>

#include "red/harness.hpp"
#include "red/sampler.hpp"

namespace {

std::vector<double> random_weights(std::size_t n) {
  red::Rng rng(7);
  std::vector<double> w(n);
  for (auto& x : w) x = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
  return w;
}

void BM_SamplingDistribution(benchmark::State& state) {
  const auto w = random_weights(static_cast<std::size_t>(state.range(0)));
  const double alpha = static_cast<double>(state.range(1)) / 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(red::sampling_distribution(w, alpha));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SamplingDistribution)->ArgsProduct({{1000, 10000, 100000, 1000000}, {5, 10, 20}});

void BM_AliasBuild(benchmark::State& state) {
  const auto p = red::sampling_distribution(random_weights(static_cast<std::size_t>(state.range(0))), 1.0).probs;
  for (auto _ : state) benchmark::DoNotOptimize(red::AliasTable(p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AliasBuild)->RangeMultiplier(10)->Range(1000, 1000000);

void BM_AliasDraw(benchmark::State& state) {
  const auto p = red::sampling_distribution(random_weights(static_cast<std::size_t>(state.range(0))), 1.0).probs;
  red::WeightedSampler s(p, 3);
  std::vector<std::size_t> batch;
  for (auto _ : state) {
    s.next_batch(256, batch);
    benchmark::DoNotOptimize(batch.data());
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_AliasDraw)->RangeMultiplier(10)->Range(1000, 1000000);

// Full build on a preset dataset, as timed in every training run.
void BM_BuildSamplerPreset(benchmark::State& state) {
  const auto task = red::prepare_task(red::DatasetSource{"expert_analog", "", std::nullopt, 0}, 0);
  const auto mode = static_cast<red::SamplerMode>(state.range(0));
  red::SamplerSpec spec{mode, 1.0, 0.2, 0.1, 3};
  for (auto _ : state) benchmark::DoNotOptimize(red::build_sampler(spec, *task.dataset, task.returns));
  state.SetLabel(red::to_string(mode));
}
BENCHMARK(BM_BuildSamplerPreset)
    ->Arg(static_cast<int>(red::SamplerMode::kUniform))
    ->Arg(static_cast<int>(red::SamplerMode::kReturnResample))
    ->Arg(static_cast<int>(red::SamplerMode::kRewardResample))
    ->Arg(static_cast<int>(red::SamplerMode::kTopFraction))
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
