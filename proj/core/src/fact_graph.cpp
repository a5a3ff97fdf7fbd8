#include "prism/fact_graph.hpp"

#include <algorithm>

#include "prism/error.hpp"

namespace prism {

std::string to_string(RiskPropagation mode) {
  return mode == RiskPropagation::onehop ? "onehop" : "fixpoint";
}

RiskPropagation parse_risk_propagation(const std::string& text) {
  if (text == "onehop") return RiskPropagation::onehop;
  if (text == "fixpoint") return RiskPropagation::fixpoint;
  throw ConfigError("unknown risk propagation mode '" + text + "' (expected onehop|fixpoint)");
}

std::optional<std::size_t> RiskGraph::sentence_of(std::size_t token) const {
  // Sentences are ordered and disjoint.
  auto it = std::upper_bound(sentences.begin(), sentences.end(), token,
                             [](std::size_t t, const SentenceSpan& s) { return t < s.token_start; });
  if (it == sentences.begin()) return std::nullopt;
  --it;
  if (token >= it->token_end) return std::nullopt;
  return static_cast<std::size_t>(it - sentences.begin());
}

namespace {

void check_sentences(std::span<const SentenceSpan> sentences) {
  for (std::size_t j = 0; j < sentences.size(); ++j) {
    const auto& s = sentences[j];
    if (s.index != j + 1) {
      throw AnnotationError("sentence " + std::to_string(j + 1) + " carries index " +
                            std::to_string(s.index));
    }
    if (s.token_start >= s.token_end) {
      throw AnnotationError("sentence " + std::to_string(s.index) + " has an empty token range");
    }
    if (!(s.risk >= 0.0 && s.risk <= 1.0)) {
      throw AnnotationError("sentence " + std::to_string(s.index) + " risk outside [0, 1]");
    }
    if (j > 0 && s.token_start < sentences[j - 1].token_end) {
      throw AnnotationError("sentence " + std::to_string(s.index) +
                            " overlaps or precedes its predecessor");
    }
  }
}

}  // namespace

RiskGraph propagate_risk(std::span<const SentenceSpan> sentences,
                         std::span<const DependencyEdge> edges, RiskPropagation mode) {
  check_sentences(sentences);
  const auto count = sentences.size();
  for (const auto& e : edges) {
    if (e.from < 1 || e.from > count || e.to < 1 || e.to > count) {
      throw AnnotationError("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                            " references an unknown sentence");
    }
    if (e.from >= e.to) {
      throw AnnotationError("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                            " does not point to a later sentence");
    }
  }

  RiskGraph graph;
  graph.sentences.assign(sentences.begin(), sentences.end());
  graph.edges.assign(edges.begin(), edges.end());
  graph.effective_risk.resize(count);
  for (std::size_t j = 0; j < count; ++j) graph.effective_risk[j] = sentences[j].risk;

  if (mode == RiskPropagation::onehop) {
    for (const auto& e : edges) {
      auto& target = graph.effective_risk[e.to - 1];
      target = std::max(target, sentences[e.from - 1].risk);
    }
    return graph;
  }

  // Edges always point forward, so index order is a topological order.
  std::vector<std::vector<SentenceId>> incoming(count);
  for (const auto& e : edges) incoming[e.to - 1].push_back(e.from);
  for (std::size_t j = 0; j < count; ++j) {
    for (SentenceId from : incoming[j]) {
      graph.effective_risk[j] = std::max(graph.effective_risk[j], graph.effective_risk[from - 1]);
    }
  }
  return graph;
}

TokenSignals derive_token_signals(const RiskGraph& graph, std::span<const FactSpan> facts,
                                  std::span<const std::uint8_t> valid, std::size_t length) {
  if (valid.size() != length) {
    throw AnnotationError("valid mask has " + std::to_string(valid.size()) + " entries, expected " +
                          std::to_string(length));
  }
  if (!graph.sentences.empty() && graph.sentences.back().token_end > length) {
    throw AnnotationError("sentence span extends past the end of the target");
  }

  TokenSignals signals;
  signals.valid_mask.assign(valid.begin(), valid.end());
  signals.fact_mask.assign(length, 0);
  signals.support_weight.assign(length, 1.0);

  for (std::size_t j = 0; j < graph.sentences.size(); ++j) {
    const auto& s = graph.sentences[j];
    const double weight = 1.0 - graph.effective_risk[j];
    std::fill(signals.support_weight.begin() + static_cast<std::ptrdiff_t>(s.token_start),
              signals.support_weight.begin() + static_cast<std::ptrdiff_t>(s.token_end), weight);
  }

  for (const auto& f : facts) {
    if (f.token_start >= f.token_end || f.token_end > length) {
      throw AnnotationError("fact " + std::to_string(f.fact_id) + " span out of range");
    }
    if (f.sentence < 1 || f.sentence > graph.sentences.size()) {
      throw AnnotationError("fact " + std::to_string(f.fact_id) + " names unknown sentence " +
                            std::to_string(f.sentence));
    }
    const auto& owner = graph.sentences[f.sentence - 1];
    if (f.token_start < owner.token_start || f.token_end > owner.token_end) {
      throw AnnotationError("fact " + std::to_string(f.fact_id) + " lies outside sentence " +
                            std::to_string(f.sentence));
    }
    for (std::size_t t = f.token_start; t < f.token_end; ++t) {
      if (valid[t] != 0) signals.fact_mask[t] = 1;
    }
  }
  return signals;
}

std::vector<SentenceSpan> segment_sentences(std::span<const std::string> token_texts) {
  std::vector<SentenceSpan> spans;
  std::size_t start = 0;
  auto close = [&](std::size_t end) {
    spans.push_back({static_cast<SentenceId>(spans.size() + 1), start, end, 0.0});
    start = end;
  };
  for (std::size_t t = 0; t < token_texts.size(); ++t) {
    const auto& text = token_texts[t];
    if (text.empty()) continue;
    const char last = text.back();
    if (last == '.' || last == '!' || last == '?' || last == '\n') close(t + 1);
  }
  if (start < token_texts.size()) close(token_texts.size());
  return spans;
}

}  // namespace prism
