#include <benchmark/benchmark.h>

#include "frlfi/fedtrain.hpp"
#include "frlfi/faultinj.hpp"
#include "frlfi/guard.hpp"

using namespace frlfi;

namespace {

policy::MLPPolicy make_policy(std::uint64_t seed) {
  Rng rng(seed);
  return policy::MLPPolicy::initialized({4, 64, 4}, fxp::kQ1_2_5, rng);
}

void BM_Forward(benchmark::State& state) {
  const auto p = make_policy(1);
  const gridworld::Observation obs{1, 0, -1, 0};
  for (auto _ : state) benchmark::DoNotOptimize(p.forward(obs));
}
BENCHMARK(BM_Forward);

void BM_GuardedForward(benchmark::State& state) {
  const auto p = make_policy(1);
  const auto det = guard::RangeDetector::build(p);
  const gridworld::Observation obs{1, 0, -1, 0};
  for (auto _ : state) benchmark::DoNotOptimize(guard::guarded_forward(p, obs, det));
}
BENCHMARK(BM_GuardedForward);

void BM_Episode(benchmark::State& state) {
  const auto p = make_policy(2);
  const auto& map = gridworld::default_maps()[0];
  Rng rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fedtrain::run_episode(p, map, {0.5}, rng, 0.9, gridworld::kDefaultMaxSteps));
  }
}
BENCHMARK(BM_Episode);

void BM_TdUpdate(benchmark::State& state) {
  auto p = make_policy(4);
  Rng rng(5);
  const auto ep = fedtrain::run_episode(p, gridworld::default_maps()[1], {1.0}, rng, 0.9, 50);
  for (auto _ : state) fedtrain::td_update(p, ep.transitions, 0.9, 0.01);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ep.transitions.size()));
}
BENCHMARK(BM_TdUpdate);

void BM_Inject(benchmark::State& state) {
  const double ber = 1.0 / static_cast<double>(state.range(0));
  const auto p = make_policy(6);
  const std::vector<fxp::Code> codes(p.codes().begin(), p.codes().end());
  Rng rng(7);
  for (auto _ : state) {
    auto c = codes;
    benchmark::DoNotOptimize(faultinj::inject(c, fxp::kQ1_2_5, ber, faultinj::FlipMode::Both, rng));
  }
}
BENCHMARK(BM_Inject)->Arg(100)->Arg(1000)->Arg(100000);

void BM_Aggregate(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  std::vector<std::vector<fxp::Code>> sets;
  for (int i = 0; i < n; ++i) {
    const auto p = make_policy(static_cast<std::uint64_t>(10 + i));
    sets.emplace_back(p.codes().begin(), p.codes().end());
  }
  for (auto _ : state) benchmark::DoNotOptimize(fedtrain::aggregate(sets, fxp::kQ1_2_5, 0.5));
}
BENCHMARK(BM_Aggregate)->Arg(4)->Arg(12);

void BM_TrainingEpisodeAllAgents(benchmark::State& state) {
  fedtrain::TrainConfig cfg;
  cfg.episodes = 1 << 20;
  cfg.record_log = false;
  fedtrain::FederatedTrainer trainer(cfg, gridworld::default_maps());
  for (auto _ : state) trainer.step();
}
BENCHMARK(BM_TrainingEpisodeAllAgents);

}  // namespace

BENCHMARK_MAIN();
