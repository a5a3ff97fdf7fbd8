#include "prism/toy_model.hpp"

#include <cmath>
#include <random>

#include "prism/error.hpp"

namespace prism {

ModelParams ModelParams::zeros(const ModelShape& shape) {
  if (shape.vocab < 2 || shape.embed_dim == 0 || shape.hidden_dim == 0 || shape.window == 0) {
    throw InputError("model dimensions must be positive and vocab >= 2");
  }
  if (shape.begin_token >= shape.vocab) throw InputError("begin token outside vocabulary");
  ModelParams p;
  p.shape = shape;
  p.embedding.assign(shape.vocab * shape.embed_dim, 0.0);
  p.w_hidden.assign(shape.input_dim() * shape.hidden_dim, 0.0);
  p.b_hidden.assign(shape.hidden_dim, 0.0);
  p.w_out.assign(shape.hidden_dim * shape.vocab, 0.0);
  p.b_out.assign(shape.vocab, 0.0);
  return p;
}

ModelParams ModelParams::random(const ModelShape& shape, std::uint64_t seed, double scale) {
  auto p = zeros(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto* tensor : {&p.embedding, &p.w_hidden, &p.w_out}) {
    for (double& v : *tensor) v = normal(rng);
  }
  return p;
}

std::array<std::span<double>, ModelParams::kTensorCount> ModelParams::tensors() {
  return {embedding, w_hidden, b_hidden, w_out, b_out};
}

std::array<std::span<const double>, ModelParams::kTensorCount> ModelParams::tensors() const {
  return {embedding, w_hidden, b_hidden, w_out, b_out};
}

const std::array<const char*, ModelParams::kTensorCount>& ModelParams::tensor_names() {
  static const std::array<const char*, kTensorCount> names = {"embedding", "w_hidden", "b_hidden",
                                                              "w_out", "b_out"};
  return names;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

void TeacherForcedBatch::append_sequence(std::span<const TokenId> input,
                                         std::span<const TokenId> target, TokenId begin_token) {
  const std::size_t prefix = input.size();
  auto token_at = [&](std::size_t i) { return i < prefix ? input[i] : target[i - prefix]; };
  for (std::size_t t = 0; t < target.size(); ++t) {
    const std::size_t end = prefix + t;  // history is [0, end)
    for (std::size_t k = 0; k < window; ++k) {
      // slot k holds history position end - window + k
      contexts.push_back(end + k >= window ? token_at(end + k - window) : begin_token);
    }
    labels.push_back(target[t]);
  }
}

TeacherForcedBatch make_teacher_forced(std::span<const TokenId> input,
                                       std::span<const TokenId> target, std::size_t window,
                                       TokenId begin_token) {
  TeacherForcedBatch batch;
  batch.window = window;
  batch.append_sequence(input, target, begin_token);
  return batch;
}

namespace {

void check_window(const ModelShape& shape, std::span<const TokenId> window) {
  if (window.size() != shape.window) {
    throw InputError("context window has " + std::to_string(window.size()) + " tokens, model expects " +
                     std::to_string(shape.window));
  }
  for (TokenId id : window) {
    if (id >= shape.vocab) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  }
}

// Hidden activations for one window; `input` receives the concatenated
// embeddings.
void hidden_layer(const ModelParams& p, std::span<const TokenId> window, std::span<double> input,
                  std::span<double> hidden) {
  const auto& s = p.shape;
  for (std::size_t k = 0; k < s.window; ++k) {
    const double* row = p.embedding.data() + window[k] * s.embed_dim;
    std::copy(row, row + s.embed_dim, input.begin() + static_cast<std::ptrdiff_t>(k * s.embed_dim));
  }
  for (std::size_t j = 0; j < s.hidden_dim; ++j) hidden[j] = p.b_hidden[j];
  for (std::size_t i = 0; i < s.input_dim(); ++i) {
    const double x = input[i];
    const double* w = p.w_hidden.data() + i * s.hidden_dim;
    for (std::size_t j = 0; j < s.hidden_dim; ++j) hidden[j] += x * w[j];
  }
  for (double& h : hidden) h = std::tanh(h);
}

void output_layer(const ModelParams& p, std::span<const double> hidden, std::span<double> logits) {
  const auto& s = p.shape;
  for (std::size_t v = 0; v < s.vocab; ++v) logits[v] = p.b_out[v];
  for (std::size_t j = 0; j < s.hidden_dim; ++j) {
    const double h = hidden[j];
    const double* w = p.w_out.data() + j * s.vocab;
    for (std::size_t v = 0; v < s.vocab; ++v) logits[v] += h * w[v];
  }
}

}  // namespace

std::vector<double> forward(const ModelParams& params, std::span<const TokenId> window) {
  check_window(params.shape, window);
  std::vector<double> input(params.shape.input_dim());
  std::vector<double> hidden(params.shape.hidden_dim);
  std::vector<double> logits(params.shape.vocab);
  hidden_layer(params, window, input, hidden);
  output_layer(params, hidden, logits);
  return logits;
}

Matrix forward(const ModelParams& params, const TeacherForcedBatch& batch) {
  if (batch.window != params.shape.window) throw InputError("batch window does not match model");
  Matrix logits(batch.rows(), params.shape.vocab);
  std::vector<double> input(params.shape.input_dim());
  std::vector<double> hidden(params.shape.hidden_dim);
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto window = batch.context(r);
    check_window(params.shape, window);
    hidden_layer(params, window, input, hidden);
    output_layer(params, hidden, logits.row(r));
  }
  return logits;
}

ModelParams backward(const ModelParams& params, const TeacherForcedBatch& batch,
                     const Matrix& dlogits) {
  const auto& s = params.shape;
  if (dlogits.rows() != batch.rows() || dlogits.cols() != s.vocab) {
    throw InputError("loss gradient shape does not match batch x vocab");
  }
  if (batch.window != s.window) throw InputError("batch window does not match model");

  auto grads = ModelParams::zeros(s);
  std::vector<double> input(s.input_dim());
  std::vector<double> hidden(s.hidden_dim);
  std::vector<double> dhidden(s.hidden_dim);
  std::vector<double> dinput(s.input_dim());

  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto window = batch.context(r);
    check_window(s, window);
    const auto dz = dlogits.row(r);
    hidden_layer(params, window, input, hidden);

    for (std::size_t v = 0; v < s.vocab; ++v) grads.b_out[v] += dz[v];
    for (std::size_t j = 0; j < s.hidden_dim; ++j) {
      const double* w = params.w_out.data() + j * s.vocab;
      double* gw = grads.w_out.data() + j * s.vocab;
      double acc = 0.0;
      for (std::size_t v = 0; v < s.vocab; ++v) {
        gw[v] += hidden[j] * dz[v];
        acc += w[v] * dz[v];
      }
      dhidden[j] = acc * (1.0 - hidden[j] * hidden[j]);  // tanh'
    }

    for (std::size_t j = 0; j < s.hidden_dim; ++j) grads.b_hidden[j] += dhidden[j];
    for (std::size_t i = 0; i < s.input_dim(); ++i) {
      const double* w = params.w_hidden.data() + i * s.hidden_dim;
      double* gw = grads.w_hidden.data() + i * s.hidden_dim;
      double acc = 0.0;
      for (std::size_t j = 0; j < s.hidden_dim; ++j) {
        gw[j] += input[i] * dhidden[j];
        acc += w[j] * dhidden[j];
      }
      dinput[i] = acc;
    }
    for (std::size_t k = 0; k < s.window; ++k) {
      double* ge = grads.embedding.data() + window[k] * s.embed_dim;
      for (std::size_t c = 0; c < s.embed_dim; ++c) ge[c] += dinput[k * s.embed_dim + c];
    }
  }
  return grads;
}

OptimizerState OptimizerState::create(const ModelShape& shape, const AdamWConfig& config) {
  return {config, 0, ModelParams::zeros(shape), ModelParams::zeros(shape)};
}

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  if (grads.shape != params.shape || state.first_moment.shape != params.shape) {
    throw InputError("optimizer shapes do not match parameters");
  }
  const auto names = ModelParams::tensor_names();
  const auto g = grads.tensors();
  for (std::size_t t = 0; t < g.size(); ++t) {
    for (std::size_t i = 0; i < g[t].size(); ++i) {
      if (!std::isfinite(g[t][i])) {
        throw NumericError(std::string("non-finite gradient in ") + names[t] + "[" +
                           std::to_string(i) + "] at optimizer step " +
                           std::to_string(state.step + 1));
      }
    }
  }

  const auto& c = state.config;
  state.step += 1;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto theta = params.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t t = 0; t < theta.size(); ++t) {
    for (std::size_t i = 0; i < theta[t].size(); ++i) {
      const double gi = g[t][i];
      m[t][i] = c.beta1 * m[t][i] + (1.0 - c.beta1) * gi;
      v[t][i] = c.beta2 * v[t][i] + (1.0 - c.beta2) * gi * gi;
      const double m_hat = m[t][i] / correction1;
      const double v_hat = v[t][i] / correction2;
      theta[t][i] -= c.learning_rate * (m_hat / (std::sqrt(v_hat) + c.epsilon) +
                                        c.weight_decay * theta[t][i]);
    }
  }
}

}  // namespace prism
