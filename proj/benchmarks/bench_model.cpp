#include <benchmark/benchmark.h>

#include <random>

#include "prism/objective.hpp"
#include "prism/toy_model.hpp"

using namespace prism;

namespace {

TeacherForcedBatch make_rows(std::size_t length, std::size_t vocab, std::size_t window) {
  std::mt19937_64 rng(9);
  std::vector<TokenId> input(8), target(length);
  for (auto& t : input) t = static_cast<TokenId>(1 + rng() % (vocab - 1));
  for (auto& t : target) t = static_cast<TokenId>(1 + rng() % (vocab - 1));
  return make_teacher_forced(input, target, window, 0);
}

void BM_Forward(benchmark::State& state) {
  const ModelShape shape{79, 16, static_cast<std::size_t>(state.range(1)), 4, 0};
  const auto params = ModelParams::random(shape, 1, 0.1);
  const auto rows = make_rows(state.range(0), shape.vocab, shape.window);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, rows));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardBackward(benchmark::State& state) {
  const ModelShape shape{79, 16, static_cast<std::size_t>(state.range(1)), 4, 0};
  const auto params = ModelParams::random(shape, 1, 0.1);
  const auto rows = make_rows(state.range(0), shape.vocab, shape.window);
  TokenSignals signals;
  for (std::size_t t = 0; t < rows.labels.size(); ++t) {
    signals.valid_mask.push_back(1);
    signals.fact_mask.push_back(t % 3 == 0);
    signals.support_weight.push_back(t % 2 ? 0.3 : 1.0);
  }
  for (auto _ : state) {
    const auto loss = total_loss(forward(params, rows), rows.labels, signals, 0.1);
    benchmark::DoNotOptimize(backward(params, rows, loss.gradient));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Forward)->Args({64, 64})->Args({256, 64});
BENCHMARK(BM_ForwardBackward)->Args({64, 64})->Args({256, 64});
BENCHMARK_MAIN();
