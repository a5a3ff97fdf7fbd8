#include "prism/objective.hpp"

#include <algorithm>
#include <cmath>

#include "prism/error.hpp"

namespace prism {

namespace {

void check_shapes(const Matrix& logits, std::span<const TokenId> labels, std::size_t mask_size) {
  if (logits.cols() < 2) throw InputError("vocabulary must have at least two entries");
  if (labels.size() != logits.rows()) {
    throw InputError("label count " + std::to_string(labels.size()) + " does not match " +
                     std::to_string(logits.rows()) + " logit rows");
  }
  if (mask_size != logits.rows()) {
    throw InputError("mask length " + std::to_string(mask_size) + " does not match " +
                     std::to_string(logits.rows()) + " logit rows");
  }
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] >= logits.cols()) {
      throw InputError("label " + std::to_string(labels[t]) + " at position " + std::to_string(t) +
                       " outside vocabulary");
    }
  }
}

// Single softmax pass shared by the value and the gradient so both see the
// same probabilities. Returns log p_label.
double softmax_into(std::span<const double> z, std::span<double> out, TokenId label) {
  double peak = -INFINITY;
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("non-finite logit");
    peak = std::max(peak, v);
  }
  double norm = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp(z[k] - peak);
    norm += out[k];
  }
  for (double& p : out) p /= norm;
  return z[label] - peak - std::log(norm);
}

// The clamped loss is flat in p_y, so its gradient vanishes there.
void complement_gradient_into(std::span<const double> probs, TokenId y, double scale,
                              double ceiling, std::span<double> grad) {
  const double p_y = probs[y];
  if (p_y >= ceiling) return;
  const double ratio = p_y / (1.0 - p_y);
  for (std::size_t k = 0; k < probs.size(); ++k) grad[k] = -scale * ratio * probs[k];
  grad[y] = scale * p_y;
}

}  // namespace

std::vector<double> softmax_probs(std::span<const double> logits_row) {
  if (logits_row.empty()) throw InputError("softmax of an empty row");
  std::vector<double> probs(logits_row.size());
  softmax_into(logits_row, probs, 0);
  return probs;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) softmax_into(logits.row(t), probs.row(t), 0);
  return probs;
}

LossResult sft_loss(const Matrix& logits, std::span<const TokenId> labels,
                    std::span<const std::uint8_t> valid) {
  check_shapes(logits, labels, valid.size());
  std::size_t n_sft = 0;
  for (auto m : valid) n_sft += (m != 0);
  if (n_sft == 0) throw EmptyBatchError("sft loss over zero valid positions");

  const double inv_n = 1.0 / static_cast<double>(n_sft);
  LossResult result{0.0, Matrix(logits.rows(), logits.cols())};
  std::vector<double> probs(logits.cols());
  double nll = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (valid[t] == 0) continue;
    const TokenId y = labels[t];
    nll -= softmax_into(logits.row(t), probs, y);
    auto grad = result.gradient.row(t);
    for (std::size_t k = 0; k < probs.size(); ++k) grad[k] = probs[k] * inv_n;
    grad[y] = (probs[y] - 1.0) * inv_n;
  }
  result.value = nll / static_cast<double>(n_sft);
  return result;
}

double max_competitor(std::span<const double> probs, TokenId label) {
  double q = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k != label) q = std::max(q, probs[k]);
  }
  return q;
}

bool keep_gate(double p_label, double q_max, double w) {
  return p_label * w * (1.0 - p_label) >= q_max * (1.0 - p_label * w);
}

bool preference_gate(std::span<const double> probs, TokenId label) {
  return probs[label] > max_competitor(probs, label);
}

std::vector<double> redistribute(std::span<const double> probs, TokenId label, double w) {
  if (label >= probs.size()) throw InputError("label outside vocabulary");
  if (!(w >= 0.0 && w <= 1.0)) throw NumericError("support weight outside [0, 1]");
  const double p = probs[label];
  if (!(p < 1.0)) throw NumericError("cannot redistribute from a label with probability 1");
  const double scale = (1.0 - p * w) / (1.0 - p);
  std::vector<double> out(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) out[k] = probs[k] * scale;
  out[label] = p * w;
  return out;
}

bool reallocation_flips(std::span<const double> probs, TokenId label, double w) {
  const auto moved = redistribute(probs, label, w);
  return max_competitor(moved, label) > moved[label];
}

GateRecord compute_alpha(std::span<const double> probs, TokenId label, bool fact_bit, double w,
                         bool apply_gates) {
  GateRecord rec;
  rec.p_label = probs[label];
  rec.q_max = max_competitor(probs, label);
  rec.w = w;
  rec.fact = fact_bit;
  rec.pref_gate = rec.p_label > rec.q_max;
  rec.keep_gate = keep_gate(rec.p_label, rec.q_max, w);
  const bool gates = !apply_gates || (rec.pref_gate && rec.keep_gate);
  rec.alpha = (fact_bit && gates) ? 1.0 - w : 0.0;
  return rec;
}

std::vector<double> complement_gradient(std::span<const double> probs, TokenId label,
                                        double alpha, std::size_t n_fact, double epsilon) {
  if (label >= probs.size()) throw InputError("label outside vocabulary");
  std::vector<double> grad(probs.size(), 0.0);
  if (n_fact == 0) return grad;
  complement_gradient_into(probs, label, alpha / static_cast<double>(n_fact), 1.0 - epsilon, grad);
  return grad;
}

CompResult comp_loss(const Matrix& logits, std::span<const TokenId> labels,
                     const TokenSignals& signals, double epsilon, AlphaVariant variant) {
  check_shapes(logits, labels, signals.length());
  if (signals.fact_mask.size() != signals.length() ||
      signals.support_weight.size() != signals.length()) {
    throw InputError("token signal vectors disagree in length");
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw NumericError("clamp epsilon outside (0, 1)");

  std::size_t n_fact = 0;
  for (auto m : signals.fact_mask) n_fact += (m != 0);

  CompResult result{0.0, Matrix(logits.rows(), logits.cols()), {}};
  result.trace.reserve(logits.rows());
  const bool apply_gates = variant != AlphaVariant::no_gate;
  const double inv_n = n_fact == 0 ? 0.0 : 1.0 / static_cast<double>(n_fact);
  const double ceiling = 1.0 - epsilon;

  std::vector<double> probs(logits.cols());
  double sum = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const TokenId y = labels[t];
    softmax_into(logits.row(t), probs, y);
    const bool active = variant == AlphaVariant::no_mask ? signals.valid_mask[t] != 0
                                                          : signals.fact_mask[t] != 0;
    GateRecord rec = compute_alpha(probs, y, active, signals.support_weight[t], apply_gates);
    rec.position = t;
    rec.fact = signals.fact_mask[t] != 0;
    if (n_fact == 0) rec.alpha = 0.0;
    result.trace.push_back(rec);
    if (rec.alpha == 0.0) continue;

    sum += rec.alpha * -std::log1p(-std::min(probs[y], ceiling));
    complement_gradient_into(probs, y, rec.alpha * inv_n, ceiling, result.gradient.row(t));
  }
  result.value = sum * inv_n;
  return result;
}

TotalResult total_loss(const Matrix& logits, std::span<const TokenId> labels,
                       const TokenSignals& signals, double lambda, double epsilon,
                       AlphaVariant variant) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw NumericError("lambda must be >= 0");
  auto sft = sft_loss(logits, labels, signals.valid_mask);
  auto comp = comp_loss(logits, labels, signals, epsilon, variant);

  TotalResult result;
  result.breakdown.sft = sft.value;
  result.breakdown.comp = comp.value;
  result.breakdown.total = sft.value + lambda * comp.value;
  result.breakdown.lambda = lambda;
  for (auto m : signals.valid_mask) result.breakdown.n_sft += (m != 0);
  for (auto m : signals.fact_mask) result.breakdown.n_fact += (m != 0);

  result.gradient = std::move(sft.gradient);
  auto out = result.gradient.values();
  auto extra = comp.gradient.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * extra[i];
  result.trace = std::move(comp.trace);
  return result;
}

std::vector<std::uint8_t> knowledge_mask(const TokenSignals& signals) {
  std::vector<std::uint8_t> kept(signals.valid_mask);
  for (std::size_t t = 0; t < kept.size(); ++t) {
    if (signals.fact_mask[t] != 0 && signals.support_weight[t] < 1.0) kept[t] = 0;
  }
  return kept;
}

LossResult knowledge_mask_loss(const Matrix& logits, std::span<const TokenId> labels,
                               const TokenSignals& signals) {
  const auto kept = knowledge_mask(signals);
  return sft_loss(logits, labels, kept);
}

std::string to_string(AlphaVariant variant) {
  switch (variant) {
    case AlphaVariant::full:
      return "full";
    case AlphaVariant::no_gate:
      return "no_gate";
    case AlphaVariant::no_mask:
      return "no_mask";
  }
  return "unknown";
}

}  // namespace prism
