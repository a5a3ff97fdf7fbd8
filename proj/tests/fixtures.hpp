#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "prism/corpus.hpp"
#include "prism/fact_graph.hpp"
#include "prism/matrix.hpp"

namespace fixture {

struct Dag {
  std::vector<prism::SentenceSpan> sentences;
  std::vector<prism::DependencyEdge> edges;
};

// 1..max_sentences sentences of 1..4 tokens, each forward edge present with
// probability edge_prob. Risks are drawn from a small grid so ties occur.
inline Dag random_dag(std::mt19937_64& rng, std::size_t max_sentences, double edge_prob = 0.3) {
  std::uniform_int_distribution<std::size_t> count(1, max_sentences);
  std::uniform_int_distribution<std::size_t> len(1, 4);
  std::uniform_int_distribution<int> grid(0, 10);
  std::bernoulli_distribution edge(edge_prob);
  Dag dag;
  const auto n = count(rng);
  std::size_t pos = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto l = len(rng);
    dag.sentences.push_back({static_cast<prism::SentenceId>(j + 1), pos, pos + l, grid(rng) / 10.0});
    pos += l;
  }
  for (prism::SentenceId from = 1; from <= n; ++from) {
    for (prism::SentenceId to = from + 1; to <= n; ++to) {
      if (edge(rng)) dag.edges.push_back({from, to});
    }
  }
  return dag;
}

inline prism::Matrix random_logits(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                   double scale = 2.0) {
  std::normal_distribution<double> normal(0.0, scale);
  prism::Matrix m(rows, cols);
  for (auto& v : m.values()) v = normal(rng);
  return m;
}

inline prism::GeneratorConfig small_corpus_config(std::size_t examples = 50, std::uint64_t seed = 7) {
  prism::GeneratorConfig c;
  c.num_examples = examples;
  c.seed = seed;
  return c;
}

}  // namespace fixture
