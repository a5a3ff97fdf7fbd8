#pragma once

// Teacher-forced training of the toy model under each objective variant,
// plus held-out evaluation of the confidence/accuracy metrics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prism/corpus.hpp"
#include "prism/fact_graph.hpp"
#include "prism/objective.hpp"
#include "prism/toy_model.hpp"

namespace prism {

enum class Method { sft, prism, knowledge_mask, prism_no_gate, prism_no_mask };

std::string to_string(Method method);
Method parse_method(const std::string& text);
/// Whether lambda affects the method's objective.
bool uses_lambda(Method method);
/// alpha variant applied by a method; sft and knowledge_mask report the full
/// gates when traced.
AlphaVariant alpha_variant(Method method);

struct TrainConfig {
  Method method = Method::prism;
  double lambda = 0.1;
  double epsilon = kDefaultClampEpsilon;
  std::uint64_t seed = 1;
  std::size_t steps = 4000;
  std::size_t batch_size = 16;
  std::size_t vocab_size = 0;  // 0: one past the largest token id in the corpus
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 64;
  std::size_t window = 4;
  double init_scale = 0.1;
  AdamWConfig adamw{3e-3, 0.9, 0.999, 1e-8, 0.0};
  RiskPropagation propagation = RiskPropagation::onehop;

  void validate() const;
};

// One example turned into model rows and per-token signals.
struct PreparedExample {
  TeacherForcedBatch rows;
  TokenSignals signals;
  std::vector<SentenceId> sentence_ids;  // 0 outside every sentence
};

PreparedExample prepare_example(const AnnotatedExample& example, std::size_t window,
                                RiskPropagation propagation);

/// Concatenation of several prepared examples into a single batch.
PreparedExample concat_examples(std::span<const PreparedExample* const> parts, std::size_t window);

// Fact positions whose support weight is at most this are "risky" in reports.
inline constexpr double kRiskyWeight = 0.5;

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  std::size_t active = 0;          // positions with alpha > 0
  std::size_t off_target = 0;      // active positions whose reallocation flips the argmax
  std::size_t nonfact_active = 0;  // active positions outside the fact mask
  double mean_p_risky = 0.0;       // NaN when the batch has no risky fact token
  double mean_p_safe_fact = 0.0;   // NaN when the batch has no safe fact token
};

struct TrainResult {
  ModelParams params;
  OptimizerState optimizer;
  std::vector<StepRecord> log;
};

/// Runs `config.steps` AdamW steps over seeded, per-epoch shuffled batches.
/// Throws DivergenceError on a non-finite loss or gradient.
TrainResult train(std::span<const AnnotatedExample> corpus, const TrainConfig& config,
                  const std::function<void(const StepRecord&)>& on_step = {});

struct EvalMetrics {
  double mean_p_risky = 0.0;
  double mean_p_safe_fact = 0.0;
  double mean_p_nonfact = 0.0;
  double nonfact_top1 = 0.0;
  double risky_top1 = 0.0;
  double gate_rate = 0.0;  // fraction of fact positions with alpha > 0 (full gates)
  std::size_t risky_tokens = 0;
  std::size_t safe_fact_tokens = 0;
  std::size_t nonfact_tokens = 0;
};

EvalMetrics evaluate(const ModelParams& params, std::span<const AnnotatedExample> examples,
                     RiskPropagation propagation);

}  // namespace prism
