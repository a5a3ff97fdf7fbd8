#pragma once

// Reference implementations written straight from the definitions, in long
// double and without sharing code with the library. Tests compare the
// library against these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "prism/fact_graph.hpp"
#include "prism/matrix.hpp"

namespace oracle {

// effective_j = max(r_j, max_{(i -> j) in E} r_i), scanning the whole edge list.
inline std::vector<double> onehop_risk(const std::vector<prism::SentenceSpan>& sentences,
                                       const std::vector<prism::DependencyEdge>& edges) {
  std::vector<double> out;
  for (const auto& s : sentences) {
    double r = s.risk;
    for (const auto& e : edges) {
      if (e.to != s.index) continue;
      for (const auto& src : sentences) {
        if (src.index == e.from) r = std::max(r, src.risk);
      }
    }
    out.push_back(r);
  }
  return out;
}

// Repeats the one-hop rule on effective risks until nothing changes.
inline std::vector<double> fixpoint_risk(const std::vector<prism::SentenceSpan>& sentences,
                                         const std::vector<prism::DependencyEdge>& edges) {
  std::vector<double> eff;
  for (const auto& s : sentences) eff.push_back(s.risk);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& e : edges) {
      const double inherited = eff[e.from - 1];
      if (inherited > eff[e.to - 1]) {
        eff[e.to - 1] = inherited;
        changed = true;
      }
    }
  }
  return eff;
}

inline std::vector<long double> softmax(std::span<const double> z) {
  long double peak = z[0];
  for (double v : z) peak = std::max<long double>(peak, v);
  std::vector<long double> p(z.size());
  long double norm = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    p[k] = std::exp(static_cast<long double>(z[k]) - peak);
    norm += p[k];
  }
  for (auto& v : p) v /= norm;
  return p;
}

// Scales the label by w, spreads the removed mass over competitors in
// proportion to their probability, and asks whether the label is still on
// top (ties count as kept).
inline bool label_survives_reallocation(const std::vector<double>& probs, std::size_t label,
                                        double w) {
  const long double p = probs[label];
  const long double removed = p * (1.0L - w);
  const long double rest = 1.0L - p;
  const long double label_after = p * w;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k == label) continue;
    const long double after = probs[k] + removed * (probs[k] / rest);
    if (after > label_after) return false;
  }
  return true;
}

inline double sft_value(const prism::Matrix& logits, const std::vector<prism::TokenId>& labels,
                        const std::vector<std::uint8_t>& valid) {
  long double sum = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (!valid[t]) continue;
    sum -= std::log(softmax(logits.row(t))[labels[t]]);
    ++n;
  }
  return static_cast<double>(sum / n);
}

// Complement value with alpha held fixed per position.
inline double comp_value(const prism::Matrix& logits, const std::vector<prism::TokenId>& labels,
                         const std::vector<double>& alpha, std::size_t n_fact, double eps) {
  if (n_fact == 0) return 0.0;
  long double sum = 0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (alpha[t] == 0.0) continue;
    const long double p = std::min<long double>(softmax(logits.row(t))[labels[t]], 1.0L - eps);
    sum += alpha[t] * -std::log(1.0L - p);
  }
  return static_cast<double>(sum / n_fact);
}

// Random point on the simplex with the label as strict argmax.
inline std::vector<double> simplex_with_top_label(std::mt19937_64& rng, std::size_t vocab,
                                                  std::size_t label) {
  std::exponential_distribution<double> draw(1.0);
  std::vector<double> p(vocab);
  double sum = 0;
  for (auto& v : p) {
    v = draw(rng);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  std::swap(p[top], p[label]);
  return p;
}

}  // namespace oracle
