#include "prism/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <system_error>

#include "prism/error.hpp"

namespace prism {

std::string Vocabulary::text(TokenId id) const {
  switch (id) {
    case kBegin:
      return "<bos>";
    case kPeriod:
      return ".";
    case kQuestion:
      return "?";
    case kTell:
      return "tell";
    case kAbout:
      return "about";
    default:
      break;
  }
  if (id < filler(0)) return "r" + std::to_string(id - kFirstRelation);
  if (id < key(0)) return "f" + std::to_string(id - filler(0));
  if (id < value(0)) return "k" + std::to_string(id - key(0));
  if (id < size()) return "v" + std::to_string(id - value(0));
  return "<" + std::to_string(id) + ">";
}

void GeneratorConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  auto probability = [&](double p, const char* name) {
    require(p >= 0.0 && p <= 1.0, std::string(name) + " must lie in [0, 1]");
  };
  require(vocab.num_relations >= 1 && vocab.num_fillers >= 1 && vocab.num_keys >= 1 &&
              vocab.num_values >= 2,
          "vocabulary needs at least one relation, filler and key and two values");
  require(min_sentences >= 1 && min_sentences <= max_sentences,
          "sentence count range must satisfy 1 <= min_sentences <= max_sentences");
  require(facts_per_sentence >= 1 && facts_per_sentence <= vocab.num_relations,
          "facts_per_sentence must lie in [1, num_relations]");
  require(chunk_limit >= 1, "chunk_limit must be >= 1");
  require(num_filler_phrases >= 1 && filler_phrase_length >= 1,
          "filler phrases must be non-empty");
  probability(fact_sentence_prob, "fact_sentence_prob");
  probability(dependency_prob, "dependency_prob");
  probability(corruption_fraction, "corruption_fraction");
  probability(corrupt_risk_min, "corrupt_risk_min");
  probability(corrupt_risk_max, "corrupt_risk_max");
  probability(clean_risk_max, "clean_risk_max");
  require(corrupt_risk_min <= corrupt_risk_max, "corrupt_risk_min exceeds corrupt_risk_max");
  const std::size_t fact_length = 2 + 2 * facts_per_sentence;
  require(fact_length <= max_sentence_tokens,
          "facts_per_sentence=" + std::to_string(facts_per_sentence) + " needs " +
              std::to_string(fact_length) + " tokens but max_sentence_tokens=" +
              std::to_string(max_sentence_tokens));
  require(filler_phrase_length + 1 <= max_sentence_tokens,
          "filler_phrase_length does not fit in max_sentence_tokens");
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

bool coin(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

}  // namespace

PlantedFacts plant_facts(const GeneratorConfig& config) {
  config.validate();
  const auto& v = config.vocab;
  std::mt19937_64 rng(config.seed);
  PlantedFacts planted;
  const std::size_t pairs = v.num_keys * v.num_relations;
  planted.value_of.resize(pairs);
  for (auto& value : planted.value_of) value = pick(rng, v.num_values);

  // Exactly round(fraction * pairs) associations are corrupted.
  std::vector<std::size_t> order(pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_corrupt =
      static_cast<std::size_t>(std::llround(config.corruption_fraction * static_cast<double>(pairs)));
  planted.corrupted.assign(pairs, 0);
  for (std::size_t i = 0; i < n_corrupt; ++i) planted.corrupted[order[i]] = 1;

  planted.filler_phrases.resize(config.num_filler_phrases);
  for (auto& phrase : planted.filler_phrases) {
    for (std::size_t i = 0; i < config.filler_phrase_length; ++i) {
      phrase.push_back(v.filler(pick(rng, v.num_fillers)));
    }
  }
  return planted;
}

std::vector<AnnotatedExample> generate(const GeneratorConfig& config) {
  const auto planted = plant_facts(config);
  const auto& v = config.vocab;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<AnnotatedExample> corpus;
  corpus.reserve(config.num_examples);
  for (std::size_t n = 0; n < config.num_examples; ++n) {
    AnnotatedExample ex;
    const std::size_t sentence_count =
        config.min_sentences + pick(rng, config.max_sentences - config.min_sentences + 1);
    std::vector<std::pair<std::size_t, SentenceId>> introduced;  // key -> introducing sentence
    std::vector<std::size_t> prompt_keys;
    std::uint32_t next_fact = 0;

    for (std::size_t j = 0; j < sentence_count; ++j) {
      const auto sid = static_cast<SentenceId>(j + 1);
      SentenceSpan span{sid, ex.target_tokens.size(), 0, 0.0};
      if (coin(rng, config.fact_sentence_prob)) {
        std::size_t key = 0;
        if (!introduced.empty() && coin(rng, config.dependency_prob)) {
          key = introduced[pick(rng, introduced.size())].first;
        } else {
          key = pick(rng, v.num_keys);
        }
        auto prior = std::find_if(introduced.begin(), introduced.end(),
                                  [&](const auto& e) { return e.first == key; });
        if (prior != introduced.end()) {
          const DependencyEdge edge{prior->second, sid};
          if (std::find(ex.edges.begin(), ex.edges.end(), edge) == ex.edges.end()) {
            ex.edges.push_back(edge);
          }
        } else {
          introduced.emplace_back(key, sid);
          prompt_keys.push_back(key);
        }

        ex.target_tokens.push_back(v.key(key));
        bool risky = false;
        const std::size_t first_relation = pick(rng, v.num_relations);
        for (std::size_t f = 0; f < config.facts_per_sentence; ++f) {
          const std::size_t relation = (first_relation + f) % v.num_relations;
          const std::size_t pair = key * v.num_relations + relation;
          risky = risky || planted.corrupted[pair] != 0;
          ex.target_tokens.push_back(v.relation(relation));
          const std::size_t at = ex.target_tokens.size();
          ex.target_tokens.push_back(v.value(planted.value_of[pair]));
          ex.facts.push_back({next_fact++, at, at + 1, sid});
        }
        ex.target_tokens.push_back(Vocabulary::kPeriod);
        span.risk = risky ? uniform(rng, config.corrupt_risk_min, config.corrupt_risk_max)
                          : uniform(rng, 0.0, config.clean_risk_max);
      } else {
        const auto& phrase = planted.filler_phrases[pick(rng, planted.filler_phrases.size())];
        ex.target_tokens.insert(ex.target_tokens.end(), phrase.begin(), phrase.end());
        ex.target_tokens.push_back(Vocabulary::kPeriod);
      }
      span.token_end = ex.target_tokens.size();
      ex.sentences.push_back(span);
    }

    ex.input_tokens = {Vocabulary::kTell, Vocabulary::kAbout};
    for (auto key : prompt_keys) ex.input_tokens.push_back(v.key(key));
    ex.input_tokens.push_back(Vocabulary::kQuestion);
    ex.valid_mask.assign(ex.target_tokens.size(), 1);
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

std::vector<Chunk> chunk(const AnnotatedExample& example, std::size_t limit) {
  if (limit == 0) throw ConfigError("chunk limit must be >= 1");
  const std::size_t total = example.target_tokens.size();
  const auto& sentences = example.sentences;
  std::vector<Chunk> chunks;
  if (total == 0) return chunks;
  if (sentences.empty()) {
    chunks.push_back({0, total, 0, 0, total > limit});
    return chunks;
  }

  Chunk current{0, 0, 0, 0, false};
  for (std::size_t j = 0; j < sentences.size(); ++j) {
    const std::size_t end = sentences[j].token_end;
    const bool has_content = current.last_sentence > current.first_sentence;
    if (has_content && end - current.token_start > limit) {
      chunks.push_back(current);
      current = {current.token_end, current.token_end, j, j, false};
    }
    current.token_end = end;
    current.last_sentence = j + 1;
    current.oversize = current.length() > limit;
  }
  current.token_end = total;
  current.oversize = current.length() > limit;
  chunks.push_back(current);
  return chunks;
}

std::vector<std::string> validate_example(const AnnotatedExample& ex) {
  std::vector<std::string> reasons;
  auto add = [&](const char* reason) {
    if (std::find(reasons.begin(), reasons.end(), reason) == reasons.end()) {
      reasons.emplace_back(reason);
    }
  };
  const std::size_t total = ex.target_tokens.size();
  if (total == 0) add("empty-target");
  if (ex.valid_mask.size() != total) add("valid-length");

  for (std::size_t j = 0; j < ex.sentences.size(); ++j) {
    const auto& s = ex.sentences[j];
    if (s.index != j + 1) add("sentence-index");
    if (s.token_start >= s.token_end || s.token_end > total) add("sentence-bounds");
    if (j > 0 && s.token_start < ex.sentences[j - 1].token_end) add("sentence-order");
    if (!(s.risk >= 0.0 && s.risk <= 1.0)) add("risk-range");
  }

  for (const auto& f : ex.facts) {
    if (f.token_start >= f.token_end || f.token_end > total) add("fact-bounds");
    if (f.sentence < 1 || f.sentence > ex.sentences.size()) {
      add("fact-sentence");
      continue;
    }
    const auto& owner = ex.sentences[f.sentence - 1];
    if (f.token_start < owner.token_start || f.token_end > owner.token_end) {
      add("fact-outside-sentence");
    }
  }

  std::set<std::pair<SentenceId, SentenceId>> seen;
  for (const auto& e : ex.edges) {
    if (e.from == e.to) {
      add("self-edge");
    } else if (e.from > e.to) {
      add("edge-direction");
    }
    if (e.from < 1 || e.to < 1 || e.from > ex.sentences.size() || e.to > ex.sentences.size()) {
      add("edge-unknown");
    }
    if (!seen.insert({e.from, e.to}).second) add("duplicate-edge");
  }
  return reasons;
}

FilterResult verify_and_filter(std::vector<AnnotatedExample> examples) {
  FilterResult result;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto reasons = validate_example(examples[i]);
    if (reasons.empty()) {
      result.kept.push_back(std::move(examples[i]));
      continue;
    }
    for (const auto& r : reasons) ++result.reason_counts[r];
    result.rejected.push_back({i, std::move(reasons)});
  }
  return result;
}

CorpusStats corpus_stats(std::span<const AnnotatedExample> kept, std::size_t instances,
                         std::size_t chunk_limit, const std::map<std::string, std::size_t>& rejects) {
  CorpusStats stats;
  stats.instances = instances;
  stats.retained = kept.size();
  stats.rejects = rejects;
  for (const auto& ex : kept) {
    std::set<std::uint32_t> ids;
    for (const auto& f : ex.facts) {
      ids.insert(f.fact_id);
      if (ex.sentences[f.sentence - 1].risk >= 0.5) ++stats.risky_fact_spans;
    }
    stats.fact_items += ids.size();
    stats.fact_spans += ex.facts.size();
    stats.relations += ex.edges.size();
    stats.sentence_spans += ex.sentences.size();
    for (const auto& c : chunk(ex, chunk_limit)) {
      ++stats.chunks;
      if (c.oversize) ++stats.oversize_chunks;
      const bool has_fact = std::any_of(ex.facts.begin(), ex.facts.end(), [&](const FactSpan& f) {
        return f.token_start < c.token_end && f.token_end > c.token_start;
      });
      if (has_fact) ++stats.masked_chunks;
    }
  }
  return stats;
}

std::string format_stats(const CorpusStats& stats) {
  std::ostringstream out;
  auto row = [&](const std::string& label, std::size_t count) {
    out << std::left << std::setw(52) << label << std::right << std::setw(10) << count << '\n';
  };
  out << std::left << std::setw(52) << "Quantity" << std::right << std::setw(10) << "Count" << '\n';
  out << std::string(62, '-') << '\n';
  out << "Training instances\n";
  row("  Instances generated", stats.instances);
  row("  Verified instances retained", stats.retained);
  out << "Fact structure\n";
  row("  Fact items", stats.fact_items);
  row("  Fact relations (dependency edges)", stats.relations);
  row("  Risky fact spans (sentence risk >= 0.5)", stats.risky_fact_spans);
  out << "Span annotations\n";
  row("  Sentence spans", stats.sentence_spans);
  row("  Fact span annotations", stats.fact_spans);
  row("  Chunks", stats.chunks);
  row("  Masked chunks (chunks with >= 1 fact item)", stats.masked_chunks);
  row("  Oversize chunks", stats.oversize_chunks);
  if (!stats.rejects.empty()) {
    out << "Rejected by reason\n";
    for (const auto& [reason, count] : stats.rejects) row("  " + reason, count);
  }
  return out.str();
}

nlohmann::ordered_json to_json(const AnnotatedExample& ex) {
  using json = nlohmann::ordered_json;
  json sentences = json::array();
  for (const auto& s : ex.sentences) {
    sentences.push_back({{"start", s.token_start}, {"end", s.token_end}, {"risk", s.risk}});
  }
  json facts = json::array();
  for (const auto& f : ex.facts) {
    facts.push_back(
        {{"id", f.fact_id}, {"start", f.token_start}, {"end", f.token_end}, {"sentence", f.sentence}});
  }
  json edges = json::array();
  for (const auto& e : ex.edges) edges.push_back({{"from", e.from}, {"to", e.to}});

  const bool all_valid =
      ex.valid_mask.size() == ex.target_tokens.size() &&
      std::all_of(ex.valid_mask.begin(), ex.valid_mask.end(), [](auto m) { return m == 1; });

  json record = json::object();
  record["input"] = ex.input_tokens;
  record["target"] = ex.target_tokens;
  record["sentences"] = std::move(sentences);
  record["facts"] = std::move(facts);
  record["edges"] = std::move(edges);
  if (!all_valid) record["valid"] = ex.valid_mask;
  for (const auto& [key, value] : ex.extra.items()) record[key] = value;
  return record;
}

namespace {

using json = nlohmann::ordered_json;

const json& require_field(const json& obj, const std::string& key, const std::string& path,
                          std::size_t line) {
  if (!obj.is_object()) throw FormatError(line, path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(line, path.empty() ? key : path + "." + key, "missing");
  return *it;
}

std::uint64_t read_unsigned(const json& value, const std::string& path, std::size_t line) {
  if (!value.is_number_unsigned()) {
    if (value.is_number_integer() && value.get<std::int64_t>() >= 0) {
      return value.get<std::uint64_t>();
    }
    throw FormatError(line, path, "expected a non-negative integer");
  }
  return value.get<std::uint64_t>();
}

const json& require_array(const json& obj, const std::string& key, std::size_t line) {
  const auto& value = require_field(obj, key, "", line);
  if (!value.is_array()) throw FormatError(line, key, "expected an array");
  return value;
}

template <typename Int>
std::vector<Int> read_ids(const json& array, const std::string& path, std::size_t line) {
  std::vector<Int> ids;
  ids.reserve(array.size());
  for (std::size_t i = 0; i < array.size(); ++i) {
    const std::string at = path + "[" + std::to_string(i) + "]";
    const auto value = read_unsigned(array[i], at, line);
    if (value > std::numeric_limits<Int>::max()) throw FormatError(line, at, "value too large");
    ids.push_back(static_cast<Int>(value));
  }
  return ids;
}

const std::set<std::string>& known_fields() {
  static const std::set<std::string> fields = {"input", "target", "sentences", "facts", "edges",
                                               "valid"};
  return fields;
}

}  // namespace

AnnotatedExample example_from_json(const json& record, std::size_t line) {
  if (!record.is_object()) throw FormatError(line, "", "record is not a JSON object");
  AnnotatedExample ex;
  ex.input_tokens = read_ids<TokenId>(require_array(record, "input", line), "input", line);
  ex.target_tokens = read_ids<TokenId>(require_array(record, "target", line), "target", line);

  const auto& sentences = require_array(record, "sentences", line);
  for (std::size_t j = 0; j < sentences.size(); ++j) {
    const std::string at = "sentences[" + std::to_string(j) + "]";
    const auto& s = sentences[j];
    SentenceSpan span;
    span.index = static_cast<SentenceId>(j + 1);
    span.token_start = read_unsigned(require_field(s, "start", at, line), at + ".start", line);
    span.token_end = read_unsigned(require_field(s, "end", at, line), at + ".end", line);
    const auto& risk = require_field(s, "risk", at, line);
    if (!risk.is_number()) throw FormatError(line, at + ".risk", "expected a number");
    span.risk = risk.get<double>();
    if (!(span.risk >= 0.0 && span.risk <= 1.0)) {
      std::ostringstream msg;
      msg << "risk " << span.risk << " outside [0, 1]";
      throw FormatError(line, at + ".risk", msg.str());
    }
    ex.sentences.push_back(span);
  }

  const auto& facts = require_array(record, "facts", line);
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const std::string at = "facts[" + std::to_string(i) + "]";
    const auto& f = facts[i];
    FactSpan fact;
    fact.fact_id = static_cast<std::uint32_t>(read_unsigned(require_field(f, "id", at, line), at + ".id", line));
    fact.token_start = read_unsigned(require_field(f, "start", at, line), at + ".start", line);
    fact.token_end = read_unsigned(require_field(f, "end", at, line), at + ".end", line);
    fact.sentence = static_cast<SentenceId>(
        read_unsigned(require_field(f, "sentence", at, line), at + ".sentence", line));
    ex.facts.push_back(fact);
  }

  const auto& edges = require_array(record, "edges", line);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string at = "edges[" + std::to_string(i) + "]";
    const auto& e = edges[i];
    ex.edges.push_back(
        {static_cast<SentenceId>(read_unsigned(require_field(e, "from", at, line), at + ".from", line)),
         static_cast<SentenceId>(read_unsigned(require_field(e, "to", at, line), at + ".to", line))});
  }

  if (auto it = record.find("valid"); it != record.end()) {
    if (!it->is_array()) throw FormatError(line, "valid", "expected an array");
    ex.valid_mask = read_ids<std::uint8_t>(*it, "valid", line);
    for (std::size_t i = 0; i < ex.valid_mask.size(); ++i) {
      if (ex.valid_mask[i] > 1) {
        throw FormatError(line, "valid[" + std::to_string(i) + "]", "expected 0 or 1");
      }
    }
  } else {
    ex.valid_mask.assign(ex.target_tokens.size(), 1);
  }

  for (const auto& [key, value] : record.items()) {
    if (!known_fields().contains(key)) ex.extra[key] = value;
  }
  return ex;
}

std::vector<AnnotatedExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  std::vector<AnnotatedExample> corpus;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw FormatError(line, "", std::string("malformed JSON: ") + e.what());
    }
    corpus.push_back(example_from_json(record, line));
  }
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return corpus;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw IoError("write failure on '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

void write_jsonl(std::span<const AnnotatedExample> examples, const std::filesystem::path& path) {
  std::string contents;
  for (const auto& ex : examples) {
    contents += to_json(ex).dump();
    contents += '\n';
  }
  write_file_atomic(path, contents);
}

}  // namespace prism
