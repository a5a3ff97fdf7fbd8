#pragma once

// Fixed-window MLP language model:
//   e = concat(E[c_0], ..., E[c_{n-1}])       (n * d)
//   h = tanh(W_h^T e + b_h)                   (hidden)
//   z = W_o^T h + b_o                         (vocab logits)
// plus an AdamW optimizer with decoupled weight decay.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prism/matrix.hpp"

namespace prism {

struct ModelShape {
  std::size_t vocab = 0;
  std::size_t embed_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t window = 0;
  TokenId begin_token = 0;

  std::size_t input_dim() const noexcept { return window * embed_dim; }
  bool operator==(const ModelShape&) const = default;
};

struct ModelParams {
  ModelShape shape;
  std::vector<double> embedding;  // [vocab, embed_dim]
  std::vector<double> w_hidden;   // [window * embed_dim, hidden_dim]
  std::vector<double> b_hidden;   // [hidden_dim]
  std::vector<double> w_out;      // [hidden_dim, vocab]
  std::vector<double> b_out;      // [vocab]

  /// All-zero parameters of the given shape. Throws InputError on a
  /// degenerate shape.
  static ModelParams zeros(const ModelShape& shape);
  /// Gaussian init with standard deviation `scale`, seeded.
  static ModelParams random(const ModelShape& shape, std::uint64_t seed, double scale = 0.1);

  static constexpr std::size_t kTensorCount = 5;
  std::array<std::span<double>, kTensorCount> tensors();
  std::array<std::span<const double>, kTensorCount> tensors() const;
  static const std::array<const char*, kTensorCount>& tensor_names();

  std::size_t parameter_count() const;
  bool operator==(const ModelParams&) const = default;
};

// Teacher-forced rows: row r predicts labels[r] from the `window` tokens
// stored at contexts[r * window, (r + 1) * window).
struct TeacherForcedBatch {
  std::size_t window = 0;
  std::vector<TokenId> contexts;
  std::vector<TokenId> labels;

  std::size_t rows() const noexcept { return labels.size(); }
  std::span<const TokenId> context(std::size_t r) const {
    return {contexts.data() + r * window, window};
  }

  /// Appends one row per target token. The context of target t is the last
  /// `window` tokens of input ++ target[0, t), left-padded with begin_token.
  void append_sequence(std::span<const TokenId> input, std::span<const TokenId> target,
                       TokenId begin_token);
};

TeacherForcedBatch make_teacher_forced(std::span<const TokenId> input,
                                       std::span<const TokenId> target, std::size_t window,
                                       TokenId begin_token);

/// Logits for one context window. Throws InputError on a wrong window length
/// or an out-of-range token.
std::vector<double> forward(const ModelParams& params, std::span<const TokenId> window);

/// Logits for every row of the batch, [rows, vocab].
Matrix forward(const ModelParams& params, const TeacherForcedBatch& batch);

/// Reverse-mode gradients of sum_{r,k} dlogits(r,k) * z(r,k) with respect to
/// every parameter. Shapes mirror `params`.
ModelParams backward(const ModelParams& params, const TeacherForcedBatch& batch,
                     const Matrix& dlogits);

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  ModelParams first_moment;
  ModelParams second_moment;

  static OptimizerState create(const ModelShape& shape, const AdamWConfig& config);
  bool operator==(const OptimizerState&) const = default;
};

/// One AdamW update in place:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Throws NumericError naming the tensor and index of the first non-finite
/// gradient entry; nothing is modified in that case.
void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

}  // namespace prism
