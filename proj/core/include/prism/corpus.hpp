#pragma once

// Annotated corpora: the synthetic planted-fact generator, sentence-boundary
// chunking, invariant filtering, and the JSONL record format.
//
// JSONL record (one per line, LF-terminated):
//   {"input": [ids], "target": [ids],
//    "sentences": [{"start": s, "end": e, "risk": r}, ...],
//    "facts": [{"id": i, "start": s, "end": e, "sentence": j}, ...],
//    "edges": [{"from": j1, "to": j2}, ...],
//    "valid": [0|1, ...]}            // optional, defaults to all ones
// Sentence j is the j-th entry (1-based). Unknown top-level fields are kept
// verbatim and written back, in their original order, after the known ones.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prism/fact_graph.hpp"
#include "prism/matrix.hpp"

namespace prism {

struct AnnotatedExample {
  std::vector<TokenId> input_tokens;
  std::vector<TokenId> target_tokens;
  std::vector<std::uint8_t> valid_mask;
  std::vector<SentenceSpan> sentences;
  std::vector<FactSpan> facts;
  std::vector<DependencyEdge> edges;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  bool operator==(const AnnotatedExample&) const = default;
};

// Fixed token layout used by the generator:
//   0 <bos>, 1 ".", 2 "?", 3 "tell", 4 "about", 5..5+A relation words,
//   then fillers, keys, values.
struct Vocabulary {
  std::size_t num_relations = 2;
  std::size_t num_fillers = 16;
  std::size_t num_keys = 24;
  std::size_t num_values = 32;

  static constexpr TokenId kBegin = 0;
  static constexpr TokenId kPeriod = 1;
  static constexpr TokenId kQuestion = 2;
  static constexpr TokenId kTell = 3;
  static constexpr TokenId kAbout = 4;
  static constexpr TokenId kFirstRelation = 5;

  TokenId relation(std::size_t i) const { return kFirstRelation + static_cast<TokenId>(i); }
  TokenId filler(std::size_t i) const {
    return static_cast<TokenId>(kFirstRelation + num_relations + i);
  }
  TokenId key(std::size_t i) const { return filler(num_fillers) + static_cast<TokenId>(i); }
  TokenId value(std::size_t i) const { return key(num_keys) + static_cast<TokenId>(i); }
  std::size_t size() const { return value(num_values); }

  /// Printable text for a token id ("k3", "v17", "." ...).
  std::string text(TokenId id) const;
};

struct GeneratorConfig {
  Vocabulary vocab;
  std::size_t num_examples = 2000;
  std::size_t min_sentences = 3;
  std::size_t max_sentences = 6;
  std::size_t facts_per_sentence = 1;  // (relation, value) claims per fact sentence
  std::size_t max_sentence_tokens = 8;
  std::size_t num_filler_phrases = 6;
  std::size_t filler_phrase_length = 4;
  double fact_sentence_prob = 0.7;
  double dependency_prob = 0.4;  // reuse a key introduced earlier in the example
  double corruption_fraction = 0.3;
  double corrupt_risk_min = 0.6;
  double corrupt_risk_max = 0.9;
  double clean_risk_max = 0.0;
  std::size_t chunk_limit = 200;
  std::uint64_t seed = 1;

  /// Throws ConfigError when a field is out of range or the fact density
  /// does not fit in a sentence.
  void validate() const;
};

/// Planted ground truth shared by every example of a generated corpus.
struct PlantedFacts {
  // value_of[key * relations + relation] -> value index
  std::vector<std::size_t> value_of;
  // corrupted[key * relations + relation]: the recorded value is unsupported.
  std::vector<std::uint8_t> corrupted;
  std::vector<std::vector<TokenId>> filler_phrases;
};

PlantedFacts plant_facts(const GeneratorConfig& config);

/// Deterministic synthetic corpus. Fact sentences read
/// "key rel value [rel value ...] ." with one fact span per value; a key
/// reused from an earlier sentence adds an edge from that sentence.
std::vector<AnnotatedExample> generate(const GeneratorConfig& config);

struct Chunk {
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::size_t first_sentence = 0;  // 0-based, inclusive
  std::size_t last_sentence = 0;   // 0-based, exclusive
  bool oversize = false;

  std::size_t length() const noexcept { return token_end - token_start; }
  bool operator==(const Chunk&) const = default;
};

/// Greedy packing of whole sentences into chunks of at most `limit` tokens.
/// A sentence longer than `limit` becomes its own chunk flagged oversize.
/// Target tokens outside every sentence are attached to the adjacent chunk.
std::vector<Chunk> chunk(const AnnotatedExample& example, std::size_t limit);

/// Invariant violations of one example as short reason tags (empty when
/// valid): "empty-target", "valid-length", "sentence-index", "sentence-bounds",
/// "sentence-order", "risk-range", "fact-bounds", "fact-sentence",
/// "fact-outside-sentence", "self-edge", "edge-direction", "edge-unknown",
/// "duplicate-edge".
std::vector<std::string> validate_example(const AnnotatedExample& example);

struct Rejection {
  std::size_t index = 0;  // position in the input list
  std::vector<std::string> reasons;
};

struct FilterResult {
  std::vector<AnnotatedExample> kept;
  std::vector<Rejection> rejected;
  std::map<std::string, std::size_t> reason_counts;
};

FilterResult verify_and_filter(std::vector<AnnotatedExample> examples);

struct CorpusStats {
  std::size_t instances = 0;
  std::size_t retained = 0;
  std::size_t fact_items = 0;
  std::size_t relations = 0;
  std::size_t sentence_spans = 0;
  std::size_t fact_spans = 0;
  std::size_t chunks = 0;
  std::size_t masked_chunks = 0;  // chunks containing at least one fact
  std::size_t oversize_chunks = 0;
  std::size_t risky_fact_spans = 0;  // raw sentence risk >= 0.5
  std::map<std::string, std::size_t> rejects;
};

CorpusStats corpus_stats(std::span<const AnnotatedExample> kept, std::size_t instances,
                         std::size_t chunk_limit,
                         const std::map<std::string, std::size_t>& rejects = {});

/// Plain-text summary table (one quantity per row).
std::string format_stats(const CorpusStats& stats);

nlohmann::ordered_json to_json(const AnnotatedExample& example);
/// Throws FormatError naming `line` and the offending field.
AnnotatedExample example_from_json(const nlohmann::ordered_json& record, std::size_t line);

std::vector<AnnotatedExample> read_jsonl(const std::filesystem::path& path);
/// Writes through a temporary file renamed into place.
void write_jsonl(std::span<const AnnotatedExample> examples, const std::filesystem::path& path);

/// Atomic text file write shared by the harness outputs.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace prism
