#include <benchmark/benchmark.h>

#include "upg/estimator.hpp"
#include "upg/hpt.hpp"
#include "upg/tasks.hpp"

namespace {

using namespace upg;

struct Setup {
  Task task = builtin_task("sparse_parity");
  PolicyParams params;
  std::vector<TokenSeq> questions;
  DemoIndex demos;

  Setup() : params(PolicyParams::zeros(task.vocab(), task.default_window())) {
    auto rng = derive_stream(1, {tag(StreamTag::kInit)});
    params = PolicyParams::uniform(task.vocab(), task.default_window(), 0.1, rng);
    auto qrng = derive_stream(1, {tag(StreamTag::kQuestionPool)});
    for (int i = 0; i < 64; ++i) questions.push_back(task.generate(qrng));
    demos = DemoIndex(demonstrations_for(task, questions));
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_SampleTrajectory(benchmark::State& state) {
  const auto& s = setup();
  auto rng = derive_stream(2, {2});
  std::size_t i = 0;
  for (auto _ : state) {
    auto t = sample_trajectory(s.params, s.questions[i++ % s.questions.size()], s.task.max_len(), 1.0, rng);
    benchmark::DoNotOptimize(t.gen_logprob_sum);
  }
}
BENCHMARK(BM_SampleTrajectory);

void BM_UnifiedGradient(benchmark::State& state) {
  const auto& s = setup();
  auto rng = derive_stream(3, {3});
  std::vector<EstimatorSample> batch;
  std::vector<double> rewards;
  for (int j = 0; j < state.range(0); ++j) {
    batch.push_back({sample_trajectory(s.params, s.questions[0], s.task.max_len(), 1.0, rng), {}});
    rewards.push_back(j % 2);
  }
  for (std::size_t j = 0; j < batch.size(); ++j) {
    batch[j].advantage.reward = rewards[j];
    batch[j].advantage.group_rewards_on = rewards;
  }
  const auto comps = preset("grpo");
  for (auto _ : state) {
    auto g = unified_gradient(batch, comps, s.params);
    benchmark::DoNotOptimize(g.values.data());
  }
}
BENCHMARK(BM_UnifiedGradient)->Arg(8)->Arg(32);

void BM_HptStep(benchmark::State& state) {
  const auto& s = setup();
  GateConfig gate;
  gate.n = 8;
  const auto comps = preset("grpo");
  auto rng = derive_stream(4, {4});
  std::size_t i = 0;
  for (auto _ : state) {
    auto r = hpt_step(s.params, s.questions[i++ % s.questions.size()], s.task, s.demos, gate, comps, rng);
    benchmark::DoNotOptimize(r.gradient.values.data());
  }
}
BENCHMARK(BM_HptStep);

}  // namespace

BENCHMARK_MAIN();
