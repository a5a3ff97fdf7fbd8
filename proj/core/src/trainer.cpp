#include "prism/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "prism/error.hpp"

namespace prism {

std::string to_string(Method method) {
  switch (method) {
    case Method::sft:
      return "sft";
    case Method::prism:
      return "prism";
    case Method::knowledge_mask:
      return "knowledge_mask";
    case Method::prism_no_gate:
      return "prism_no_gate";
    case Method::prism_no_mask:
      return "prism_no_mask";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::sft, Method::prism, Method::knowledge_mask, Method::prism_no_gate,
                   Method::prism_no_mask}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown method '" + text +
                    "' (expected sft|prism|knowledge_mask|prism_no_gate|prism_no_mask)");
}

bool uses_lambda(Method method) {
  return method == Method::prism || method == Method::prism_no_gate ||
         method == Method::prism_no_mask;
}

AlphaVariant alpha_variant(Method method) {
  switch (method) {
    case Method::prism_no_gate:
      return AlphaVariant::no_gate;
    case Method::prism_no_mask:
      return AlphaVariant::no_mask;
    default:
      return AlphaVariant::full;
  }
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be a finite value >= 0");
  require(epsilon > 0.0 && epsilon <= 1e-3, "epsilon must lie in (0, 1e-3]");
  require(steps >= 1, "steps must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(embed_dim >= 1 && hidden_dim >= 1 && window >= 1, "model dimensions must be >= 1");
  require(init_scale >= 0.0, "init_scale must be >= 0");
  require(adamw.learning_rate > 0.0, "learning_rate must be > 0");
  require(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0,
          "betas must lie in [0, 1)");
  require(adamw.epsilon > 0.0, "adam_epsilon must be > 0");
  require(adamw.weight_decay >= 0.0, "weight_decay must be >= 0");
}

PreparedExample prepare_example(const AnnotatedExample& example, std::size_t window,
                                RiskPropagation propagation) {
  PreparedExample out;
  out.rows = make_teacher_forced(example.input_tokens, example.target_tokens, window,
                                 Vocabulary::kBegin);
  const auto graph = propagate_risk(example.sentences, example.edges, propagation);
  out.signals = derive_token_signals(graph, example.facts, example.valid_mask,
                                     example.target_tokens.size());
  out.sentence_ids.assign(example.target_tokens.size(), 0);
  for (const auto& s : example.sentences) {
    std::fill(out.sentence_ids.begin() + static_cast<std::ptrdiff_t>(s.token_start),
              out.sentence_ids.begin() + static_cast<std::ptrdiff_t>(s.token_end), s.index);
  }
  return out;
}

PreparedExample concat_examples(std::span<const PreparedExample* const> parts,
                                std::size_t window) {
  PreparedExample out;
  out.rows.window = window;
  for (const auto* p : parts) {
    auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(out.rows.contexts, p->rows.contexts);
    append(out.rows.labels, p->rows.labels);
    append(out.signals.fact_mask, p->signals.fact_mask);
    append(out.signals.support_weight, p->signals.support_weight);
    append(out.signals.valid_mask, p->signals.valid_mask);
    append(out.sentence_ids, p->sentence_ids);
  }
  return out;
}

namespace {

struct StepLoss {
  LossBreakdown breakdown;
  Matrix gradient;
  GateTrace trace;
};

StepLoss objective_for(const TrainConfig& config, const Matrix& logits,
                       const PreparedExample& batch) {
  const auto& labels = batch.rows.labels;
  const auto& signals = batch.signals;
  StepLoss out;
  switch (config.method) {
    case Method::sft: {
      auto r = sft_loss(logits, labels, signals.valid_mask);
      out.breakdown.sft = r.value;
      out.breakdown.total = r.value;
      out.breakdown.n_sft = static_cast<std::size_t>(
          std::count_if(signals.valid_mask.begin(), signals.valid_mask.end(), [](auto m) { return m != 0; }));
      out.gradient = std::move(r.gradient);
      break;
    }
    case Method::knowledge_mask: {
      const auto kept = knowledge_mask(signals);
      auto r = sft_loss(logits, labels, kept);
      out.breakdown.sft = r.value;
      out.breakdown.total = r.value;
      out.breakdown.n_sft = static_cast<std::size_t>(
          std::count_if(kept.begin(), kept.end(), [](auto m) { return m != 0; }));
      out.gradient = std::move(r.gradient);
      break;
    }
    case Method::prism:
    case Method::prism_no_gate:
    case Method::prism_no_mask: {
      auto r = total_loss(logits, labels, signals, config.lambda, config.epsilon,
                          alpha_variant(config.method));
      out.breakdown = r.breakdown;
      out.gradient = std::move(r.gradient);
      out.trace = std::move(r.trace);
      break;
    }
  }
  if (!uses_lambda(config.method)) {
    for (auto m : signals.fact_mask) out.breakdown.n_fact += (m != 0);
  }
  out.breakdown.lambda = uses_lambda(config.method) ? config.lambda : 0.0;
  return out;
}

double mean_or_nan(double sum, std::size_t count) {
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count);
}

}  // namespace

TrainResult train(std::span<const AnnotatedExample> corpus, const TrainConfig& config,
                  const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  if (corpus.empty()) throw ConfigError("training corpus is empty");

  TokenId max_token = Vocabulary::kQuestion;
  for (const auto& ex : corpus) {
    for (TokenId t : ex.input_tokens) max_token = std::max(max_token, t);
    for (TokenId t : ex.target_tokens) max_token = std::max(max_token, t);
  }
  const std::size_t vocab = std::max<std::size_t>(config.vocab_size, max_token + 1);
  const ModelShape shape{vocab, config.embed_dim,
                         config.hidden_dim, config.window, Vocabulary::kBegin};

  std::vector<PreparedExample> prepared;
  prepared.reserve(corpus.size());
  for (const auto& ex : corpus) prepared.push_back(prepare_example(ex, config.window, config.propagation));

  TrainResult result{ModelParams::random(shape, config.seed, config.init_scale),
                     OptimizerState::create(shape, config.adamw),
                     {}};
  result.log.reserve(config.steps);

  std::mt19937_64 order_rng(config.seed + 1);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<const PreparedExample*> parts;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    parts.clear();
    while (parts.size() < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      parts.push_back(&prepared[order[cursor++]]);
      if (parts.size() == corpus.size()) break;
    }
    const auto batch = concat_examples(parts, config.window);
    Matrix logits;
    StepLoss loss;
    try {
      logits = forward(result.params, batch.rows);
      loss = objective_for(config, logits, batch);
    } catch (const NumericError& e) {
      throw DivergenceError(step, e.what());
    }
    if (!std::isfinite(loss.breakdown.total)) {
      throw DivergenceError(step, "non-finite loss");
    }

    StepRecord rec;
    rec.step = step;
    rec.loss = loss.breakdown;
    double risky_sum = 0.0, safe_sum = 0.0;
    std::size_t risky_n = 0, safe_n = 0;
    std::vector<double> probs;
    for (std::size_t t = 0; t < batch.rows.rows(); ++t) {
      if (batch.signals.fact_mask[t] == 0) continue;
      probs = softmax_probs(logits.row(t));
      const double p = probs[batch.rows.labels[t]];
      if (batch.signals.support_weight[t] <= kRiskyWeight) {
        risky_sum += p;
        ++risky_n;
      } else {
        safe_sum += p;
        ++safe_n;
      }
    }
    rec.mean_p_risky = mean_or_nan(risky_sum, risky_n);
    rec.mean_p_safe_fact = mean_or_nan(safe_sum, safe_n);
    for (const auto& g : loss.trace) {
      if (g.alpha <= 0.0) continue;
      ++rec.active;
      if (!g.fact) ++rec.nonfact_active;
      probs = softmax_probs(logits.row(g.position));
      const TokenId y = batch.rows.labels[g.position];
      // p_label == 1 leaves nothing to redistribute, so nothing can flip.
      if (probs[y] < 1.0 && reallocation_flips(probs, y, g.w)) ++rec.off_target;
    }

    const auto grads = backward(result.params, batch.rows, loss.gradient);
    try {
      optimizer_step(result.params, grads, result.optimizer);
    } catch (const NumericError& e) {
      throw DivergenceError(step, e.what());
    }
    result.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return result;
}

EvalMetrics evaluate(const ModelParams& params, std::span<const AnnotatedExample> examples,
                     RiskPropagation propagation) {
  EvalMetrics m;
  double risky_sum = 0.0, safe_sum = 0.0, nonfact_sum = 0.0;
  std::size_t nonfact_hits = 0, risky_hits = 0, fact_total = 0, gated = 0;
  for (const auto& ex : examples) {
    const auto prepared = prepare_example(ex, params.shape.window, propagation);
    const auto logits = forward(params, prepared.rows);
    for (std::size_t t = 0; t < prepared.rows.rows(); ++t) {
      if (prepared.signals.valid_mask[t] == 0) continue;
      const auto probs = softmax_probs(logits.row(t));
      const TokenId y = prepared.rows.labels[t];
      const double p = probs[y];
      const bool top1 = preference_gate(probs, y);
      const double w = prepared.signals.support_weight[t];
      if (prepared.signals.fact_mask[t] == 0) {
        nonfact_sum += p;
        nonfact_hits += top1;
        ++m.nonfact_tokens;
        continue;
      }
      ++fact_total;
      if (compute_alpha(probs, y, true, w).alpha > 0.0) ++gated;
      if (w <= kRiskyWeight) {
        risky_sum += p;
        risky_hits += top1;
        ++m.risky_tokens;
      } else {
        safe_sum += p;
        ++m.safe_fact_tokens;
      }
    }
  }
  m.mean_p_risky = mean_or_nan(risky_sum, m.risky_tokens);
  m.mean_p_safe_fact = mean_or_nan(safe_sum, m.safe_fact_tokens);
  m.mean_p_nonfact = mean_or_nan(nonfact_sum, m.nonfact_tokens);
  m.nonfact_top1 = mean_or_nan(static_cast<double>(nonfact_hits), m.nonfact_tokens);
  m.risky_top1 = mean_or_nan(static_cast<double>(risky_hits), m.risky_tokens);
  m.gate_rate = mean_or_nan(static_cast<double>(gated), fact_total);
  return m;
}

}  // namespace prism
