#include "prism/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prism/checkpoint.hpp"
#include "prism/error.hpp"

namespace prism {

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

const std::set<std::string>& generator_keys() {
  static const std::set<std::string> keys = {
      "num_relations",       "num_fillers",        "num_keys",         "num_values",
      "num_examples",        "min_sentences",      "max_sentences",    "facts_per_sentence",
      "max_sentence_tokens", "num_filler_phrases", "filler_phrase_length",
      "fact_sentence_prob",  "dependency_prob",    "corruption_fraction",
      "corrupt_risk_min",    "corrupt_risk_max",   "clean_risk_max",   "chunk_limit",
      "plant_defects"};
  return keys;
}

const std::set<std::string>& run_keys() {
  static const std::set<std::string> keys = {
      "method",     "lambda",        "epsilon",    "steps",         "batch_size",
      "vocab_size", "embed_dim",     "hidden_dim", "window",        "init_scale",
      "learning_rate", "beta1",      "beta2",      "adam_epsilon",  "weight_decay",
      "risk_propagation", "corpus",  "heldout_fraction", "run_id"};
  return keys;
}

const std::set<std::string>& shared_keys() {
  static const std::set<std::string> keys = {"seed", "out"};
  return keys;
}

class ValueReader {
 public:
  explicit ValueReader(const KeyValues& values) {
    for (const auto& [k, v] : values) {
      if (!generator_keys().contains(k) && !run_keys().contains(k) && !shared_keys().contains(k)) {
        throw ConfigError("unknown config key '" + k + "'");
      }
      map_[k] = v;
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) const {
    auto it = map_.find(key);
    if (it == map_.end()) return;
    const std::string& text = it->second;
    if constexpr (std::is_same_v<T, std::string>) {
      out = text;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      out = text;
    } else {
      T value{};
      const auto* end = text.data() + text.size();
      auto [ptr, ec] = std::from_chars(text.data(), end, value);
      if (ec != std::errc() || ptr != end) {
        throw ConfigError("config key '" + key + "' has invalid value '" + text + "'");
      }
      out = value;
    }
  }

 private:
  std::map<std::string, std::string> map_;
};

std::string to_text(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string to_text(T v) {
  return std::to_string(v);
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues values;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto next = text.find('\n', pos);
    if (next == std::string_view::npos) next = text.size();
    std::string_view line = text.substr(pos, next - pos);
    pos = next + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    auto key = trim(std::string_view(stripped).substr(0, eq));
    auto value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    values.emplace_back(std::move(key), std::move(value));
  }
  return values;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str());
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

void set_value(KeyValues& values, const std::string& key, const std::string& value) {
  for (auto& [k, v] : values) {
    if (k == key) {
      v = value;
      return;
    }
  }
  values.emplace_back(key, value);
}

PreprocessConfig preprocess_config_from(const KeyValues& values) {
  ValueReader r(values);
  PreprocessConfig c;
  auto& g = c.generator;
  r.get("num_relations", g.vocab.num_relations);
  r.get("num_fillers", g.vocab.num_fillers);
  r.get("num_keys", g.vocab.num_keys);
  r.get("num_values", g.vocab.num_values);
  r.get("num_examples", g.num_examples);
  r.get("min_sentences", g.min_sentences);
  r.get("max_sentences", g.max_sentences);
  r.get("facts_per_sentence", g.facts_per_sentence);
  r.get("max_sentence_tokens", g.max_sentence_tokens);
  r.get("num_filler_phrases", g.num_filler_phrases);
  r.get("filler_phrase_length", g.filler_phrase_length);
  r.get("fact_sentence_prob", g.fact_sentence_prob);
  r.get("dependency_prob", g.dependency_prob);
  r.get("corruption_fraction", g.corruption_fraction);
  r.get("corrupt_risk_min", g.corrupt_risk_min);
  r.get("corrupt_risk_max", g.corrupt_risk_max);
  r.get("clean_risk_max", g.clean_risk_max);
  r.get("chunk_limit", g.chunk_limit);
  r.get("seed", g.seed);
  r.get("plant_defects", c.plant_defects);
  r.get("out", c.out_dir);
  g.validate();
  return c;
}

RunConfig run_config_from(const KeyValues& values) {
  ValueReader r(values);
  RunConfig c;
  auto& t = c.train;
  std::string method = to_string(t.method);
  r.get("method", method);
  t.method = parse_method(method);
  r.get("lambda", t.lambda);
  r.get("epsilon", t.epsilon);
  r.get("seed", t.seed);
  r.get("steps", t.steps);
  r.get("batch_size", t.batch_size);
  r.get("vocab_size", t.vocab_size);
  r.get("embed_dim", t.embed_dim);
  r.get("hidden_dim", t.hidden_dim);
  r.get("window", t.window);
  r.get("init_scale", t.init_scale);
  r.get("learning_rate", t.adamw.learning_rate);
  r.get("beta1", t.adamw.beta1);
  r.get("beta2", t.adamw.beta2);
  r.get("adam_epsilon", t.adamw.epsilon);
  r.get("weight_decay", t.adamw.weight_decay);
  std::string propagation = to_string(t.propagation);
  r.get("risk_propagation", propagation);
  t.propagation = parse_risk_propagation(propagation);
  r.get("corpus", c.corpus);
  r.get("out", c.out_dir);
  r.get("heldout_fraction", c.heldout_fraction);
  r.get("run_id", c.run_id);
  t.validate();
  if (!(c.heldout_fraction > 0.0 && c.heldout_fraction < 1.0)) {
    throw ConfigError("heldout_fraction must lie in (0, 1)");
  }
  return c;
}

KeyValues resolved(const PreprocessConfig& c) {
  const auto& g = c.generator;
  return {{"num_relations", to_text(g.vocab.num_relations)},
          {"num_fillers", to_text(g.vocab.num_fillers)},
          {"num_keys", to_text(g.vocab.num_keys)},
          {"num_values", to_text(g.vocab.num_values)},
          {"num_examples", to_text(g.num_examples)},
          {"min_sentences", to_text(g.min_sentences)},
          {"max_sentences", to_text(g.max_sentences)},
          {"facts_per_sentence", to_text(g.facts_per_sentence)},
          {"max_sentence_tokens", to_text(g.max_sentence_tokens)},
          {"num_filler_phrases", to_text(g.num_filler_phrases)},
          {"filler_phrase_length", to_text(g.filler_phrase_length)},
          {"fact_sentence_prob", to_text(g.fact_sentence_prob)},
          {"dependency_prob", to_text(g.dependency_prob)},
          {"corruption_fraction", to_text(g.corruption_fraction)},
          {"corrupt_risk_min", to_text(g.corrupt_risk_min)},
          {"corrupt_risk_max", to_text(g.corrupt_risk_max)},
          {"clean_risk_max", to_text(g.clean_risk_max)},
          {"chunk_limit", to_text(g.chunk_limit)},
          {"seed", to_text(g.seed)},
          {"plant_defects", to_text(c.plant_defects)},
          {"out", c.out_dir.string()}};
}

namespace {

KeyValues training_fields(const RunConfig& c) {
  const auto& t = c.train;
  return {{"method", to_string(t.method)},
          {"lambda", to_text(t.lambda)},
          {"epsilon", to_text(t.epsilon)},
          {"seed", to_text(t.seed)},
          {"steps", to_text(t.steps)},
          {"batch_size", to_text(t.batch_size)},
          {"vocab_size", to_text(t.vocab_size)},
          {"embed_dim", to_text(t.embed_dim)},
          {"hidden_dim", to_text(t.hidden_dim)},
          {"window", to_text(t.window)},
          {"init_scale", to_text(t.init_scale)},
          {"learning_rate", to_text(t.adamw.learning_rate)},
          {"beta1", to_text(t.adamw.beta1)},
          {"beta2", to_text(t.adamw.beta2)},
          {"adam_epsilon", to_text(t.adamw.epsilon)},
          {"weight_decay", to_text(t.adamw.weight_decay)},
          {"risk_propagation", to_string(t.propagation)},
          {"heldout_fraction", to_text(c.heldout_fraction)}};
}

}  // namespace

KeyValues resolved(const RunConfig& c) {
  auto values = training_fields(c);
  values.emplace_back("corpus", c.corpus.string());
  values.emplace_back("out", c.out_dir.string());
  values.emplace_back("run_id", c.run_id.empty() ? default_run_id(c.train) : c.run_id);
  return values;
}

std::string config_hash(const RunConfig& config) {
  const std::string text = format_key_values(training_fields(config));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string default_run_id(const TrainConfig& config) {
  if (!uses_lambda(config.method)) return to_string(config.method);
  return to_string(config.method) + "_lambda" + to_text(config.lambda);
}

std::string format_decimal(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10f", value);
  return buf;
}

std::map<std::string, std::size_t> plant_defects(std::vector<AnnotatedExample>& corpus,
                                                 std::size_t count) {
  static const std::array<const char*, 5> kinds = {"self-edge", "edge-direction", "risk-range",
                                                   "fact-outside-sentence", "sentence-bounds"};
  std::map<std::string, std::size_t> planted;
  if (count == 0) return planted;
  if (count > corpus.size()) throw ConfigError("plant_defects exceeds the number of examples");
  const std::size_t stride = corpus.size() / count;
  for (std::size_t i = 0; i < count; ++i) {
    auto& ex = corpus[i * stride];
    std::string kind = kinds[i % kinds.size()];
    const auto last = static_cast<SentenceId>(ex.sentences.size());
    // These two defects need a second sentence to be expressible.
    if (last < 2 && (kind == "edge-direction" || kind == "fact-outside-sentence")) {
      kind = "risk-range";
    }
    if (kind == "self-edge") {
      ex.edges.push_back({1, 1});
    } else if (kind == "edge-direction") {
      ex.edges.push_back({last, 1});
    } else if (kind == "risk-range") {
      ex.sentences.front().risk = 1.5;
    } else if (kind == "fact-outside-sentence") {
      ex.facts.push_back({999, ex.sentences.front().token_start, ex.sentences.back().token_end, 1});
    } else {
      ex.sentences.back().token_end = ex.target_tokens.size() + 3;
    }
    ++planted[kind];
  }
  return planted;
}

PreprocessResult cmd_preprocess(const PreprocessConfig& config) {
  config.generator.validate();
  auto corpus = generate(config.generator);
  const std::size_t instances = corpus.size();
  PreprocessResult result;
  result.planted = plant_defects(corpus, config.plant_defects);
  auto filtered = verify_and_filter(std::move(corpus));

  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create '" + config.out_dir.string() + "': " + ec.message());
  result.corpus_path = config.out_dir / "corpus.jsonl";
  write_jsonl(filtered.kept, result.corpus_path);

  result.stats = corpus_stats(filtered.kept, instances, config.generator.chunk_limit,
                              filtered.reason_counts);
  result.table = format_stats(result.stats);
  write_file_atomic(config.out_dir / "stats.txt", result.table);
  write_file_atomic(config.out_dir / "preprocess_config.txt", format_key_values(resolved(config)));
  return result;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "final_sft_loss",     "final_comp_loss",       "final_total_loss",
      "risky_p_label",      "safe_fact_p_label",     "nonfact_p_label",
      "nonfact_top1",       "risky_top1",            "heldout_gate_rate",
      "train_gate_activation_rate", "off_target_events", "nonfact_active_events"};
  return names;
}

double MetricsReport::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw Error("metric '" + name + "' not in report " + run_id);
}

void attach_deltas(MetricsReport& report, const MetricsReport& baseline) {
  report.baseline_run = baseline.run_id;
  report.deltas.clear();
  for (const auto& [name, value] : report.metrics) {
    report.deltas.push_back(value - baseline.metric(name));
  }
}

TrainOutcome run_training(const RunConfig& config, std::span<const AnnotatedExample> train_split,
                          std::span<const AnnotatedExample> heldout_split, std::size_t vocab_size) {
  auto train_config = config.train;
  train_config.vocab_size = std::max(train_config.vocab_size, vocab_size);

  TrainOutcome outcome;
  outcome.result = train(train_split, train_config);
  outcome.heldout = evaluate(outcome.result.params, heldout_split, train_config.propagation);

  std::size_t fact_positions = 0, active = 0, off_target = 0, nonfact_active = 0;
  for (const auto& rec : outcome.result.log) {
    fact_positions += rec.loss.n_fact;
    active += rec.active - rec.nonfact_active;
    off_target += rec.off_target;
    nonfact_active += rec.nonfact_active;
  }
  const auto& last = outcome.result.log.back().loss;
  const auto& h = outcome.heldout;

  auto& report = outcome.report;
  report.run_id = config.run_id.empty() ? default_run_id(config.train) : config.run_id;
  report.method = config.train.method;
  report.lambda = uses_lambda(config.train.method) ? config.train.lambda : 0.0;
  report.seed = config.train.seed;
  report.metrics = {
      {"final_sft_loss", last.sft},
      {"final_comp_loss", last.comp},
      {"final_total_loss", last.total},
      {"risky_p_label", h.mean_p_risky},
      {"safe_fact_p_label", h.mean_p_safe_fact},
      {"nonfact_p_label", h.mean_p_nonfact},
      {"nonfact_top1", h.nonfact_top1},
      {"risky_top1", h.risky_top1},
      {"heldout_gate_rate", h.gate_rate},
      {"train_gate_activation_rate",
       fact_positions == 0 ? 0.0 : static_cast<double>(active) / static_cast<double>(fact_positions)},
      {"off_target_events", static_cast<double>(off_target)},
      {"nonfact_active_events", static_cast<double>(nonfact_active)}};
  return outcome;
}

namespace {

struct Split {
  std::vector<AnnotatedExample> all;
  std::size_t train_count = 0;
  std::size_t vocab = 0;

  std::span<const AnnotatedExample> train() const { return {all.data(), train_count}; }
  std::span<const AnnotatedExample> heldout() const {
    return {all.data() + train_count, all.size() - train_count};
  }
};

Split load_split(const RunConfig& config) {
  Split split;
  split.all = read_jsonl(config.corpus);
  if (split.all.size() < 2) throw ConfigError("corpus needs at least two examples to hold one out");
  auto held = static_cast<std::size_t>(
      std::llround(config.heldout_fraction * static_cast<double>(split.all.size())));
  held = std::clamp<std::size_t>(held, 1, split.all.size() - 1);
  split.train_count = split.all.size() - held;
  TokenId max_token = Vocabulary::kQuestion;
  for (const auto& ex : split.all) {
    for (TokenId t : ex.input_tokens) max_token = std::max(max_token, t);
    for (TokenId t : ex.target_tokens) max_token = std::max(max_token, t);
  }
  split.vocab = static_cast<std::size_t>(max_token) + 1;
  return split;
}

std::string steps_csv(const std::vector<StepRecord>& log) {
  std::string out = "step,sft,comp,total,n_sft,n_fact,lambda,active,off_target,nonfact_active,"
                    "mean_p_risky,mean_p_safe_fact\n";
  for (const auto& r : log) {
    out += std::to_string(r.step) + "," + format_decimal(r.loss.sft) + "," +
           format_decimal(r.loss.comp) + "," + format_decimal(r.loss.total) + "," +
           std::to_string(r.loss.n_sft) + "," + std::to_string(r.loss.n_fact) + "," +
           format_decimal(r.loss.lambda) + "," + std::to_string(r.active) + "," +
           std::to_string(r.off_target) + "," + std::to_string(r.nonfact_active) + "," +
           format_decimal(r.mean_p_risky) + "," + format_decimal(r.mean_p_safe_fact) + "\n";
  }
  return out;
}

std::string report_text(const MetricsReport& report) {
  std::ostringstream out;
  out << "run " << report.run_id << " (method " << to_string(report.method) << ", lambda "
      << format_decimal(report.lambda) << ", seed " << report.seed << ")\n";
  if (!report.baseline_run.empty()) out << "deltas against baseline run " << report.baseline_run << "\n";
  for (std::size_t i = 0; i < report.metrics.size(); ++i) {
    out << std::left << std::setw(30) << report.metrics[i].first << std::right << std::setw(18)
        << format_decimal(report.metrics[i].second);
    if (i < report.deltas.size()) out << std::setw(18) << format_decimal(report.deltas[i]);
    out << "\n";
  }
  return out.str();
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void write_run(const RunConfig& config, const TrainOutcome& outcome) {
  ensure_dir(config.out_dir);
  write_file_atomic(config.out_dir / "config.txt", format_key_values(resolved(config)));
  Checkpoint checkpoint{outcome.result.params, outcome.result.optimizer, config.train.seed,
                        config_hash(config), resolved(config)};
  save_checkpoint(checkpoint, config.out_dir / "checkpoint.json");
  write_file_atomic(config.out_dir / "steps.csv", steps_csv(outcome.result.log));
  save_metrics(outcome.report, config.out_dir / "metrics.json");
  write_file_atomic(config.out_dir / "report.txt", report_text(outcome.report));
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config) {
  const auto split = load_split(config);
  auto outcome = run_training(config, split.train(), split.heldout(), split.vocab);
  write_run(config, outcome);
  return outcome;
}

void save_metrics(const MetricsReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  doc["run_id"] = report.run_id;
  doc["method"] = to_string(report.method);
  doc["lambda"] = report.lambda;
  doc["seed"] = report.seed;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.metrics) {
    metrics[k] = std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
  }
  doc["metrics"] = std::move(metrics);
  doc["baseline_run"] = report.baseline_run;
  nlohmann::ordered_json deltas = nlohmann::ordered_json::array();
  for (double d : report.deltas) {
    deltas.push_back(std::isnan(d) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(d));
  }
  doc["deltas"] = std::move(deltas);
  write_file_atomic(path, doc.dump(2) + "\n");
}

MetricsReport load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics '" + path.string() + "'");
  try {
    const auto doc = nlohmann::ordered_json::parse(in);
    MetricsReport r;
    r.run_id = doc.at("run_id").get<std::string>();
    r.method = parse_method(doc.at("method").get<std::string>());
    r.lambda = doc.at("lambda").get<double>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : doc.at("metrics").items()) {
      r.metrics.emplace_back(k, v.is_null() ? std::nan("") : v.get<double>());
    }
    r.baseline_run = doc.value("baseline_run", "");
    for (const auto& d : doc.value("deltas", nlohmann::ordered_json::array())) {
      r.deltas.push_back(d.is_null() ? std::nan("") : d.get<double>());
    }
    return r;
  } catch (const nlohmann::ordered_json::exception& e) {
    throw IoError("malformed metrics '" + path.string() + "': " + e.what());
  }
}

namespace {

std::string csv_rows(const MetricsReport& r) {
  std::string out;
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    out += r.run_id + "," + to_string(r.method) + "," + format_decimal(r.lambda) + "," +
           std::to_string(r.seed) + "," + r.metrics[i].first + "," +
           format_decimal(r.metrics[i].second) + "," +
           (i < r.deltas.size() ? format_decimal(r.deltas[i]) : std::string("nan")) + "\n";
  }
  return out;
}

std::string delta_summary(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  const auto& base = reports.front();
  out << "baseline run: " << base.run_id << " (risky p_label "
      << format_decimal(base.metric("risky_p_label")) << ", non-fact top-1 "
      << format_decimal(base.metric("nonfact_top1")) << ")\n";
  out << std::left << std::setw(28) << "run" << std::right << std::setw(12) << "lambda"
      << std::setw(18) << "d_risky_p" << std::setw(18) << "suppression" << std::setw(18)
      << "d_nonfact_top1" << "\n";
  const double p0 = base.metric("risky_p_label");
  for (const auto& r : reports) {
    const double p = r.metric("risky_p_label");
    out << std::left << std::setw(28) << r.run_id << std::right << std::setw(12)
        << format_decimal(r.lambda) << std::setw(18) << format_decimal(p - p0) << std::setw(18)
        << format_decimal((p0 - p) / p0) << std::setw(18)
        << format_decimal(r.metric("nonfact_top1") - base.metric("nonfact_top1")) << "\n";
  }
  return out.str();
}

}  // namespace

AblationOutcome cmd_ablate(const RunConfig& base, const std::vector<double>& lambdas,
                           const std::vector<Method>& methods) {
  if (lambdas.empty()) throw ConfigError("lambda list is empty");
  if (std::find(lambdas.begin(), lambdas.end(), 0.0) == lambdas.end()) {
    throw ConfigError("lambda list must include 0");
  }
  if (methods.empty()) throw ConfigError("method list is empty");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambda values must be >= 0");
  }
  const auto split = load_split(base);

  // The baseline is the sft-equivalent run: sft itself, or a lambda-0 run.
  struct Planned {
    Method method;
    double lambda;
  };
  std::vector<Planned> plan;
  auto has_method = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  if (has_method(Method::sft)) {
    plan.push_back({Method::sft, 0.0});
  } else {
    auto first_lambda = std::find_if(methods.begin(), methods.end(), uses_lambda);
    plan.push_back(first_lambda == methods.end() ? Planned{Method::sft, 0.0}
                                                 : Planned{*first_lambda, 0.0});
  }
  for (Method m : methods) {
    if (!uses_lambda(m)) {
      if (m != plan.front().method) plan.push_back({m, 0.0});
      continue;
    }
    for (double l : lambdas) {
      if (m == plan.front().method && l == 0.0) continue;
      plan.push_back({m, l});
    }
  }

  ensure_dir(base.out_dir);
  AblationOutcome outcome;
  for (const auto& p : plan) {
    RunConfig run = base;
    run.train.method = p.method;
    run.train.lambda = p.lambda;
    run.run_id = default_run_id(run.train);
    run.out_dir = base.out_dir / run.run_id;
    try {
      auto trained = run_training(run, split.train(), split.heldout(), split.vocab);
      if (outcome.reports.empty()) {
        attach_deltas(trained.report, trained.report);
      } else {
        attach_deltas(trained.report, outcome.reports.front());
      }
      write_run(run, trained);
      outcome.reports.push_back(std::move(trained.report));
    } catch (const NumericError& e) {
      if (outcome.reports.empty()) throw;  // no baseline, nothing to compare against
      outcome.failures.emplace_back(run.run_id, e.what());
    }
  }

  outcome.csv = std::string(kAblationCsvHeader) + "\n";
  for (const auto& r : outcome.reports) outcome.csv += csv_rows(r);
  for (const auto& [run_id, message] : outcome.failures) {
    outcome.csv += run_id + ",,,"+ std::to_string(base.train.seed) + ",diverged,nan,nan\n";
  }
  outcome.summary = delta_summary(outcome.reports);
  for (const auto& [run_id, message] : outcome.failures) {
    outcome.summary += "FAILED " + run_id + ": " + message + "\n";
  }
  write_file_atomic(base.out_dir / "ablation.csv", outcome.csv);
  write_file_atomic(base.out_dir / "summary.txt", outcome.summary);
  return outcome;
}

std::size_t cmd_trace(const TraceOptions& options) {
  const auto checkpoint = load_checkpoint(options.checkpoint);
  const auto stored = run_config_from([&] {
    KeyValues kv;
    for (const auto& [k, v] : checkpoint.config) {
      if (k != "corpus" && k != "out" && k != "run_id") kv.emplace_back(k, v);
    }
    return kv;
  }());
  if (config_hash(stored) != checkpoint.config_hash) {
    throw ConfigError("checkpoint config does not match its recorded hash");
  }
  if (options.expected && config_hash(*options.expected) != checkpoint.config_hash) {
    throw ConfigError("config hash " + config_hash(*options.expected) +
                      " does not match checkpoint hash " + checkpoint.config_hash);
  }

  const auto corpus = read_jsonl(options.corpus);
  if (options.first >= corpus.size() && options.count > 0) {
    throw ConfigError("trace slice starts past the end of the corpus");
  }
  const std::size_t end = std::min(corpus.size(), options.first + options.count);
  const auto variant = alpha_variant(stored.train.method);

  std::string out;
  std::size_t rows = 0;
  for (std::size_t i = options.first; i < end; ++i) {
    const auto prepared = prepare_example(corpus[i], checkpoint.params.shape.window,
                                          stored.train.propagation);
    const auto logits = forward(checkpoint.params, prepared.rows);
    const auto comp = comp_loss(logits, prepared.rows.labels, prepared.signals,
                                stored.train.epsilon, variant);
    for (const auto& g : comp.trace) {
      nlohmann::ordered_json row = {{"example", i},
                                    {"position", g.position},
                                    {"sentence", prepared.sentence_ids[g.position]},
                                    {"token", prepared.rows.labels[g.position]},
                                    {"fact", g.fact},
                                    {"p_label", g.p_label},
                                    {"q_max", g.q_max},
                                    {"w", g.w},
                                    {"pref_gate", g.pref_gate},
                                    {"keep_gate", g.keep_gate},
                                    {"alpha", g.alpha}};
      out += row.dump() + "\n";
      ++rows;
    }
  }
  if (options.out_file.has_parent_path()) ensure_dir(options.out_file.parent_path());
  write_file_atomic(options.out_file, out);
  return rows;
}

std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                       const std::optional<std::filesystem::path>& baseline,
                       const std::optional<std::filesystem::path>& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<MetricsReport> reports;
  for (const auto& dir : run_dirs) reports.push_back(load_metrics(dir / "metrics.json"));
  const auto base = baseline ? load_metrics(*baseline / "metrics.json") : reports.front();
  std::string csv = std::string(kAblationCsvHeader) + "\n";
  std::string text;
  for (auto& r : reports) {
    attach_deltas(r, base);
    csv += csv_rows(r);
  }
  std::vector<MetricsReport> ordered{base};
  for (const auto& r : reports) {
    if (r.run_id != base.run_id) ordered.push_back(r);
  }
  text = delta_summary(ordered);
  if (out_dir) {
    ensure_dir(*out_dir);
    write_file_atomic(*out_dir / "report.csv", csv);
    write_file_atomic(*out_dir / "report.txt", text);
  }
  return text;
}

}  // namespace prism
