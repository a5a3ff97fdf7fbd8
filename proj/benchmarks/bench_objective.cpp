#include <benchmark/benchmark.h>

#include <random>

#include "prism/fact_graph.hpp"
#include "prism/objective.hpp"

using namespace prism;

namespace {

struct Batch {
  Matrix logits;
  std::vector<TokenId> labels;
  TokenSignals signals;
};

Batch make_batch(std::size_t rows, std::size_t vocab) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Batch b{Matrix(rows, vocab), {}, {}};
  for (auto& v : b.logits.values()) v = normal(rng);
  for (std::size_t t = 0; t < rows; ++t) {
    b.labels.push_back(static_cast<TokenId>(rng() % vocab));
    b.signals.valid_mask.push_back(1);
    b.signals.fact_mask.push_back(unit(rng) < 0.4);
    b.signals.support_weight.push_back(unit(rng));
  }
  return b;
}

void BM_SftLoss(benchmark::State& state) {
  const auto b = make_batch(state.range(0), state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(sft_loss(b.logits, b.labels, b.signals.valid_mask));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_TotalLoss(benchmark::State& state) {
  const auto b = make_batch(state.range(0), state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(total_loss(b.logits, b.labels, b.signals, 0.1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_KeepGateVsRedistribute(benchmark::State& state) {
  std::vector<double> p(state.range(0), 0.5 / (state.range(0) - 1));
  p[0] = 0.5;
  const bool use_gate = state.range(1) != 0;
  for (auto _ : state) {
    if (use_gate) {
      benchmark::DoNotOptimize(keep_gate(p[0], max_competitor(p, 0), 0.7));
    } else {
      const auto moved = redistribute(p, 0, 0.7);
      benchmark::DoNotOptimize(moved[0] >= max_competitor(moved, 0));
    }
  }
}

void BM_PropagateRisk(benchmark::State& state) {
  const auto n = static_cast<SentenceId>(state.range(0));
  std::vector<SentenceSpan> sentences;
  std::vector<DependencyEdge> edges;
  for (SentenceId j = 1; j <= n; ++j) {
    sentences.push_back({j, (j - 1) * 8u, j * 8u, (j % 7) / 7.0});
    if (j > 1) edges.push_back({j - 1, j});
    if (j > 3) edges.push_back({j - 3, j});
  }
  for (auto _ : state) benchmark::DoNotOptimize(propagate_risk(sentences, edges));
}

}  // namespace

BENCHMARK(BM_SftLoss)->Args({64, 79})->Args({256, 128});
BENCHMARK(BM_TotalLoss)->Args({64, 79})->Args({256, 128});
BENCHMARK(BM_KeepGateVsRedistribute)->Args({64, 1})->Args({64, 0});
BENCHMARK(BM_PropagateRisk)->Arg(8)->Arg(64);
