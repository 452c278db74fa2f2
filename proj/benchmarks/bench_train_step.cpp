#include <benchmark/benchmark.h>

#include "red/algos.hpp"
#include "red/harness.hpp"

namespace {

void BM_TrainStep(benchmark::State& state) {
  const auto task = red::prepare_task(red::DatasetSource{"expert_analog", "", std::nullopt, 0}, 0);
  red::AlgoConfig cfg;
  cfg.family = red::all_families()[static_cast<std::size_t>(state.range(0))];
  cfg.batch_size = static_cast<std::size_t>(state.range(1));
  const auto& meta = task.dataset->meta();
  auto learner = red::init_learner(cfg, meta.obs_dim, task.mdp->num_actions(), 1);
  red::WeightedSampler sampler = red::build_sampler({}, *task.dataset, task.returns);
  for (auto _ : state) benchmark::DoNotOptimize(red::train_step(learner, cfg, *task.dataset, sampler));
  state.SetLabel(red::to_string(cfg.family));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_TrainStep)
    ->ArgsProduct({{0, 1, 2, 3}, {64, 256}})
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
