#pragma once

// Sentence/fact annotations and their conversion into per-token training
// signals: the fact-active mask and the support weight w_t = 1 - effective
// sentence risk.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prism {

// 1-based sentence index, matching the annotation format.
using SentenceId = std::uint32_t;

struct SentenceSpan {
  SentenceId index = 0;
  std::size_t token_start = 0;  // inclusive
  std::size_t token_end = 0;    // exclusive
  double risk = 0.0;

  std::size_t length() const noexcept { return token_end - token_start; }
  bool operator==(const SentenceSpan&) const = default;
};

struct FactSpan {
  std::uint32_t fact_id = 0;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  SentenceId sentence = 0;

  bool operator==(const FactSpan&) const = default;
};

// Sentence `to` relies on content introduced by the earlier sentence `from`.
struct DependencyEdge {
  SentenceId from = 0;
  SentenceId to = 0;

  bool operator==(const DependencyEdge&) const = default;
};

enum class RiskPropagation {
  onehop,    // inherit the raw risk of immediate predecessors only
  fixpoint,  // inherit effective risk transitively along dependency chains
};

std::string to_string(RiskPropagation mode);
RiskPropagation parse_risk_propagation(const std::string& text);

struct RiskGraph {
  std::vector<SentenceSpan> sentences;
  std::vector<DependencyEdge> edges;
  std::vector<double> effective_risk;  // one per sentence, same order

  // Position in `sentences` of the sentence containing token t, if any.
  std::optional<std::size_t> sentence_of(std::size_t token) const;
};

struct TokenSignals {
  std::vector<std::uint8_t> fact_mask;
  std::vector<double> support_weight;
  std::vector<std::uint8_t> valid_mask;

  std::size_t length() const noexcept { return valid_mask.size(); }
};

/// Builds the risk graph. Sentences must be ordered, disjoint and carry
/// risks in [0, 1]; every edge must point from an earlier existing sentence to
/// a later one. Throws AnnotationError otherwise.
RiskGraph propagate_risk(std::span<const SentenceSpan> sentences,
                         std::span<const DependencyEdge> edges,
                         RiskPropagation mode = RiskPropagation::onehop);

/// Per-token signals for a target of length `length`. Tokens outside every
/// sentence get weight 1 and are never fact-active; the fact mask is the union
/// of fact spans restricted to valid positions.
TokenSignals derive_token_signals(const RiskGraph& graph, std::span<const FactSpan> facts,
                                  std::span<const std::uint8_t> valid, std::size_t length);

/// Splits a token sequence into sentences after every token whose text ends
/// in '.', '!', '?' or a newline. Risks are left at 0; indices are 1-based.
std::vector<SentenceSpan> segment_sentences(std::span<const std::string> token_texts);

}  // namespace prism
