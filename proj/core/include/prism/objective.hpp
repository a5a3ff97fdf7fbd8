#pragma once

// Risk-gated training objective over per-position logits.
//
// For each target position t with label y and softmax probabilities p:
//   sft   = -(1/N_sft)  sum_t valid_t log p_y
//   comp  =  (1/N_fact) sum_t alpha_t (-log(1 - min(p_y, 1 - eps)))
//   total = sft + lambda * comp
// where alpha_t = fact_t * pref_t * keep_t * (1 - w_t) and the gates ask that
// the label is the strict argmax now (pref) and would remain the argmax after
// scaling its mass by w_t and renormalising the competitors (keep).
//
// All losses return exact gradients with respect to the logits. Reductions
// run in ascending position order so results are bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prism/fact_graph.hpp"
#include "prism/matrix.hpp"

namespace prism {

inline constexpr double kDefaultClampEpsilon = 1e-6;

// Which factors of alpha_t are applied. `no_gate` drops both model-aware
// gates, `no_mask` replaces the fact mask with the valid mask.
enum class AlphaVariant { full, no_gate, no_mask };

struct GateRecord {
  std::size_t position = 0;
  double p_label = 0.0;
  double q_max = 0.0;
  double w = 1.0;
  bool fact = false;
  bool pref_gate = false;
  bool keep_gate = false;
  double alpha = 0.0;
};

using GateTrace = std::vector<GateRecord>;

struct LossBreakdown {
  double sft = 0.0;
  double comp = 0.0;
  double total = 0.0;
  std::size_t n_sft = 0;
  std::size_t n_fact = 0;
  double lambda = 0.0;
};

struct LossResult {
  double value = 0.0;
  Matrix gradient;
};

struct CompResult {
  double value = 0.0;
  Matrix gradient;
  GateTrace trace;
};

struct TotalResult {
  LossBreakdown breakdown;
  Matrix gradient;
  GateTrace trace;
};

/// Numerically stable softmax (max-subtracted). Throws NumericError on
/// non-finite input.
std::vector<double> softmax_probs(std::span<const double> logits_row);

/// Row-wise softmax of a [T, V] logits matrix.
Matrix softmax_rows(const Matrix& logits);

/// Mean negative log-likelihood over valid positions and its gradient
/// (p - onehot(y)) / N_sft on valid rows. Throws EmptyBatchError when no
/// position is valid.
LossResult sft_loss(const Matrix& logits, std::span<const TokenId> labels,
                    std::span<const std::uint8_t> valid);

/// Largest probability among tokens other than `label`.
double max_competitor(std::span<const double> probs, TokenId label);

/// True when the label would stay on top after reallocation:
/// p*w*(1-p) >= q*(1 - p*w). Equality keeps.
bool keep_gate(double p_label, double q_max, double w);

/// True when `label` is the strict argmax of `probs`.
bool preference_gate(std::span<const double> probs, TokenId label);

/// Scales the label entry by w and every competitor by (1 - p*w)/(1 - p).
/// Throws NumericError when p_label >= 1 or w is outside [0, 1].
std::vector<double> redistribute(std::span<const double> probs, TokenId label, double w);

/// Whether some competitor strictly overtakes the label once `redistribute`
/// is applied, i.e. the reallocation would change the preferred token.
bool reallocation_flips(std::span<const double> probs, TokenId label, double w);

/// Gate evaluation and auxiliary weight for one position. With
/// `apply_gates == false` both gates are still recorded but alpha ignores them.
GateRecord compute_alpha(std::span<const double> probs, TokenId label, bool fact_bit, double w,
                         bool apply_gates = true);

/// Gradient of alpha * -log(1 - min(p_y, 1 - eps)) / n_fact with respect to
/// the logits of one row, given its probabilities:
///   g_y = (alpha/N) p_y,  g_k = -(alpha/N) p_y p_k / (1 - p_y).
/// Zero when p_y >= 1 - eps or n_fact == 0.
std::vector<double> complement_gradient(std::span<const double> probs, TokenId label,
                                        double alpha, std::size_t n_fact,
                                        double epsilon = kDefaultClampEpsilon);

/// Complement loss with its analytic logit gradient; alpha is held
/// constant. N_fact == 0 yields value 0 and a zero gradient. The trace holds
/// one record per position.
CompResult comp_loss(const Matrix& logits, std::span<const TokenId> labels,
                     const TokenSignals& signals, double epsilon = kDefaultClampEpsilon,
                     AlphaVariant variant = AlphaVariant::full);

/// sft + lambda * comp with the summed gradient. For lambda == 0 the
/// breakdown total and the gradient equal sft_loss bit for bit.
TotalResult total_loss(const Matrix& logits, std::span<const TokenId> labels,
                       const TokenSignals& signals, double lambda,
                       double epsilon = kDefaultClampEpsilon,
                       AlphaVariant variant = AlphaVariant::full);

/// Valid mask with every fact position of support weight < 1 removed.
std::vector<std::uint8_t> knowledge_mask(const TokenSignals& signals);

/// SFT restricted to positions surviving `knowledge_mask`. Throws
/// EmptyBatchError when nothing survives.
LossResult knowledge_mask_loss(const Matrix& logits, std::span<const TokenId> labels,
                               const TokenSignals& signals);

std::string to_string(AlphaVariant variant);

}  // namespace prism
