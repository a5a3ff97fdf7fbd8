#pragma once

// Command implementations behind the `prism` CLI. Each command reads a
// plain-text key/value config, writes its artifacts into an output
// directory, and returns an in-memory summary for callers and tests.
//
// Config syntax: one `key = value` per line, `#` starts a comment, blank
// lines ignored. Keys are shared by every command; see README for the list.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prism/corpus.hpp"
#include "prism/trainer.hpp"

namespace prism {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Throws ConfigError naming the line for syntax errors or duplicate keys.
KeyValues parse_key_values(std::string_view text);
KeyValues read_config_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);
/// Replaces or appends `key`.
void set_value(KeyValues& values, const std::string& key, const std::string& value);

struct PreprocessConfig {
  GeneratorConfig generator;
  std::size_t plant_defects = 0;  // invalid examples substituted before filtering
  std::filesystem::path out_dir = "out";
};

struct RunConfig {
  TrainConfig train;
  std::filesystem::path corpus = "out/corpus.jsonl";
  std::filesystem::path out_dir = "out";
  double heldout_fraction = 0.1;
  std::string run_id;  // defaults to method and lambda
};

/// Every key is checked against the union of known keys; unknown keys raise
/// ConfigError. Values out of range raise ConfigError.
PreprocessConfig preprocess_config_from(const KeyValues& values);
RunConfig run_config_from(const KeyValues& values);

KeyValues resolved(const PreprocessConfig& config);
KeyValues resolved(const RunConfig& config);

/// FNV-1a over the resolved training fields (paths and run id excluded),
/// as 16 lowercase hex digits.
std::string config_hash(const RunConfig& config);
std::string default_run_id(const TrainConfig& config);

/// Fixed decimal rendering used in every CSV and report ("nan" for NaN).
std::string format_decimal(double value);

struct PreprocessResult {
  std::filesystem::path corpus_path;
  CorpusStats stats;
  std::map<std::string, std::size_t> planted;  // reason -> planted count
  std::string table;
};

/// generate -> plant defects -> verify_and_filter -> write_jsonl, plus the
/// statistics table in <out>/stats.txt.
PreprocessResult cmd_preprocess(const PreprocessConfig& config);

/// Corrupts `count` examples at evenly spaced positions, cycling
/// through self-edge, edge-direction, risk-range, fact-outside-sentence and
/// sentence-bounds defects. Returns reason -> count.
std::map<std::string, std::size_t> plant_defects(std::vector<AnnotatedExample>& corpus,
                                                 std::size_t count);

struct MetricsReport {
  std::string run_id;
  Method method = Method::prism;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;  // fixed order
  std::string baseline_run;                              // empty until deltas computed
  std::vector<double> deltas;                            // parallel to metrics

  double metric(const std::string& name) const;
};

/// Names of the reported metrics in report order.
const std::vector<std::string>& metric_names();

struct TrainOutcome {
  MetricsReport report;
  TrainResult result;
  EvalMetrics heldout;
};

/// Splits the corpus (last heldout_fraction held out), trains, evaluates and
/// writes config.txt, checkpoint.json, steps.csv, metrics.json and
/// report.txt into out_dir.
TrainOutcome cmd_train(const RunConfig& config);

/// Training on an explicit split without touching the file system.
TrainOutcome run_training(const RunConfig& config, std::span<const AnnotatedExample> train_split,
                          std::span<const AnnotatedExample> heldout_split, std::size_t vocab_size);

/// Fills baseline_run and deltas of `report` against `baseline`.
void attach_deltas(MetricsReport& report, const MetricsReport& baseline);

struct AblationOutcome {
  std::vector<MetricsReport> reports;  // baseline first
  std::vector<std::pair<std::string, std::string>> failures;  // run id -> message
  std::string csv;
  std::string summary;
};

/// Runs every method in `methods` at every lambda (once for methods that
/// ignore lambda) with the shared seed and corpus. The lambda list must
/// contain 0; the sft-equivalent run is the delta baseline. Writes
/// ablation.csv, summary.txt and one sub-directory per run.
AblationOutcome cmd_ablate(const RunConfig& base, const std::vector<double>& lambdas,
                           const std::vector<Method>& methods = {Method::prism});

inline constexpr std::string_view kAblationCsvHeader =
    "run_id,method,lambda,seed,metric,value,delta_vs_sft";

struct TraceOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus;
  std::size_t first = 0;
  std::size_t count = 16;
  std::filesystem::path out_file = "trace.jsonl";
  std::optional<RunConfig> expected;  // checked against the checkpoint config hash
};

/// Per-token gate records for corpus[first, first + count) as JSONL rows
/// {example, position, sentence, token, fact, p_label, q_max, w, pref_gate,
/// keep_gate, alpha}. Returns the number of rows written.
std::size_t cmd_trace(const TraceOptions& options);

/// Loads metrics.json from each run directory and renders a delta table
/// against `baseline` (defaults to the first run). Writes report.csv into
/// out_dir when given.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                       const std::optional<std::filesystem::path>& baseline,
                       const std::optional<std::filesystem::path>& out_dir);

void save_metrics(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_metrics(const std::filesystem::path& path);

}  // namespace prism
