#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gradmix/numcore.hpp"

namespace gradmix {

enum class ModelFamily { softmax_classifier, mlp_token_tagger };

inline std::string to_string(ModelFamily f) {
  return f == ModelFamily::softmax_classifier ? "softmax_classifier" : "mlp_token_tagger";
}

inline ModelFamily model_family_from_string(const std::string& s) {
  if (s == "softmax_classifier") return ModelFamily::softmax_classifier;
  if (s == "mlp_token_tagger") return ModelFamily::mlp_token_tagger;
  throw ContractError("unknown model family '" + s + "'");
}

/// Architecture of a small per-token scorer. hidden_dim == 0 is a linear
/// softmax layer; otherwise one tanh hidden layer feeds the softmax.
///
/// Parameter layout (row-major): [W1 (H x D), b1 (H),] W (C x in), b (C).
struct ModelSpec {
  ModelFamily family = ModelFamily::softmax_classifier;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 2;

  void validate() const {
    if (input_dim == 0) throw ContractError("ModelSpec: input_dim must be positive");
    if (num_classes < 2) throw ContractError("ModelSpec: num_classes must be >= 2");
  }

  std::size_t output_fan_in() const { return hidden_dim == 0 ? input_dim : hidden_dim; }

  std::size_t param_dim() const {
    const std::size_t hidden = hidden_dim == 0 ? 0 : hidden_dim * input_dim + hidden_dim;
    return hidden + num_classes * output_fan_in() + num_classes;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// A labeled example. Classification examples carry a single token; token
/// tagging examples carry one feature row and one label per token.
/// `features` is row-major with labels.size() rows of input_dim values.
struct Example {
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t num_tokens() const noexcept { return labels.size(); }

  std::span<const double> token(std::size_t t, std::size_t dim) const {
    return std::span<const double>(features).subspan(t * dim, dim);
  }

  friend bool operator==(const Example&, const Example&) = default;
};

/// A batch entry. `key` is the canonical index that fixes the summation order
/// so that losses do not depend on batch order.
struct BatchItem {
  std::uint64_t key = 0;
  const Example* example = nullptr;
};

using Batch = std::vector<BatchItem>;

/// Batch over a contiguous run of examples keyed by position.
inline Batch make_batch(std::span<const Example> examples) {
  Batch b;
  b.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) b.push_back({i, &examples[i]});
  return b;
}

/// Batch over selected indices of `examples`, keyed by index.
inline Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices) {
  Batch b;
  b.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= examples.size()) throw ContractError("make_batch: index out of range");
    b.push_back({i, &examples[i]});
  }
  return b;
}

struct ModelState {
  ModelSpec spec;
  ParamVec theta;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

struct GradReport {
  double loss = 0.0;
  ParamVec grad;
};

/// Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
/// Draws from the `init` substream only.
inline ModelState init_params(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  ParamVec theta(spec.param_dim());
  std::size_t pos = 0;
  auto fill = [&](std::size_t rows, std::size_t fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < rows * fan_in; ++i) theta[pos++] = rng.uniform(-s, s);
    pos += rows;  // bias stays zero
  };
  if (spec.hidden_dim > 0) fill(spec.hidden_dim, spec.input_dim);
  fill(spec.num_classes, spec.output_fan_in());
  return {spec, std::move(theta)};
}

inline ModelState init_params(const ModelSpec& spec, RngStreams& streams) {
  return init_params(spec, streams.stream(Substream::init));
}

namespace detail {

struct Layout {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  explicit Layout(const ModelSpec& s) {
    if (s.hidden_dim > 0) {
      b1 = s.hidden_dim * s.input_dim;
      w2 = b1 + s.hidden_dim;
    }
    b2 = w2 + s.num_classes * s.output_fan_in();
  }
};

// Forward pass for one token. Fills `hidden` (when present) and `logits`.
inline void forward_token(const ModelSpec& spec, const Layout& L, std::span<const double> theta,
                          std::span<const double> x, std::vector<double>& hidden,
                          std::vector<double>& logits) {
  std::span<const double> in = x;
  if (spec.hidden_dim > 0) {
    hidden.assign(spec.hidden_dim, 0.0);
    for (std::size_t h = 0; h < spec.hidden_dim; ++h) {
      double a = theta[L.b1 + h];
      const double* w = &theta[L.w1 + h * spec.input_dim];
      for (std::size_t d = 0; d < spec.input_dim; ++d) a += w[d] * x[d];
      hidden[h] = std::tanh(a);
    }
    in = hidden;
  }
  const std::size_t fan_in = spec.output_fan_in();
  logits.assign(spec.num_classes, 0.0);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    double z = theta[L.b2 + c];
    const double* w = &theta[L.w2 + c * fan_in];
    for (std::size_t d = 0; d < fan_in; ++d) z += w[d] * in[d];
    logits[c] = z;
  }
}

// In-place softmax; returns log-sum-exp of the input logits.
inline double softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return m + std::log(sum);
}

inline void check_example(const ModelSpec& spec, const Example& ex) {
  if (ex.labels.empty()) throw ContractError("example has no tokens");
  if (ex.features.size() != ex.labels.size() * spec.input_dim) {
    throw ContractError("example feature size " + std::to_string(ex.features.size()) +
                        " does not match " + std::to_string(ex.labels.size()) + " x input_dim " +
                        std::to_string(spec.input_dim));
  }
  if (spec.family == ModelFamily::softmax_classifier && ex.labels.size() != 1) {
    throw ContractError("softmax_classifier examples must carry exactly one label");
  }
  for (int y : ex.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes) {
      throw ContractError("label " + std::to_string(y) + " out of range [0, " +
                          std::to_string(spec.num_classes) + ")");
    }
  }
}

}  // namespace detail

/// Class probabilities for every token of `ex`, row-major (tokens x classes).
inline std::vector<double> class_probabilities(const ModelState& state, const Example& ex) {
  const ModelSpec& spec = state.spec;
  const detail::Layout L(spec);
  std::vector<double> hidden, logits, out;
  out.reserve(ex.num_tokens() * spec.num_classes);
  for (std::size_t t = 0; t < ex.num_tokens(); ++t) {
    detail::forward_token(spec, L, state.theta.values(), ex.token(t, spec.input_dim), hidden, logits);
    detail::softmax_inplace(logits);
    out.insert(out.end(), logits.begin(), logits.end());
  }
  return out;
}

/// Mean cross-entropy over all tokens of the batch and its analytic gradient.
/// Items are summed in ascending key order.
inline GradReport loss_and_grad(const ModelState& state, const Batch& batch) {
  if (batch.empty()) throw ContractError("loss_and_grad: empty batch");
  const ModelSpec& spec = state.spec;
  if (state.theta.dim() != spec.param_dim()) throw ContractError("loss_and_grad: theta/spec mismatch");

  Batch ordered = batch;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const BatchItem& a, const BatchItem& b) { return a.key < b.key; });

  const detail::Layout L(spec);
  const auto theta = state.theta.values();
  const std::size_t fan_in = spec.output_fan_in();
  ParamVec grad(spec.param_dim());
  auto g = grad.values();

  std::vector<double> hidden, probs, dhidden(spec.hidden_dim);
  double total = 0.0;
  std::size_t tokens = 0;

  for (const BatchItem& item : ordered) {
    const Example& ex = *item.example;
    detail::check_example(spec, ex);
    for (std::size_t t = 0; t < ex.num_tokens(); ++t) {
      const auto x = ex.token(t, spec.input_dim);
      detail::forward_token(spec, L, theta, x, hidden, probs);
      const int y = ex.labels[t];
      const double logit_y = probs[y];
      total += detail::softmax_inplace(probs) - logit_y;
      ++tokens;

      probs[y] -= 1.0;  // dL/dz
      std::span<const double> in = spec.hidden_dim > 0 ? std::span<const double>(hidden) : x;
      for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const double dz = probs[c];
        double* gw = &g[L.w2 + c * fan_in];
        for (std::size_t d = 0; d < fan_in; ++d) gw[d] += dz * in[d];
        g[L.b2 + c] += dz;
      }
      if (spec.hidden_dim > 0) {
        for (std::size_t h = 0; h < spec.hidden_dim; ++h) {
          double acc = 0.0;
          for (std::size_t c = 0; c < spec.num_classes; ++c) acc += theta[L.w2 + c * fan_in + h] * probs[c];
          dhidden[h] = acc * (1.0 - hidden[h] * hidden[h]);
        }
        for (std::size_t h = 0; h < spec.hidden_dim; ++h) {
          double* gw = &g[L.w1 + h * spec.input_dim];
          for (std::size_t d = 0; d < spec.input_dim; ++d) gw[d] += dhidden[h] * x[d];
          g[L.b1 + h] += dhidden[h];
        }
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(tokens);
  for (double& v : g) v *= inv;
  return {total * inv, std::move(grad)};
}

/// Mean cross-entropy only.
inline double loss(const ModelState& state, const Batch& batch) { return loss_and_grad(state, batch).loss; }

/// theta' = theta - lr * grad.
inline ModelState sgd_step(const ModelState& state, const ParamVec& grad, double lr) {
  require_same_dim(state.theta, grad, "sgd_step");
  if (!grad.all_finite()) throw ContractError("sgd_step: non-finite gradient");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("sgd_step: learning rate must be finite and >= 0");
  ModelState next{state.spec, ParamVec(state.theta.dim())};
  for (std::size_t i = 0; i < grad.dim(); ++i) next.theta[i] = state.theta[i] - lr * grad[i];
  return next;
}

/// Argmax label per token; ties go to the lowest class index.
inline std::vector<int> predict(const ModelState& state, const Example& ex) {
  const ModelSpec& spec = state.spec;
  if (ex.features.size() != ex.num_tokens() * spec.input_dim) throw ContractError("predict: feature size mismatch");
  const detail::Layout L(spec);
  std::vector<double> hidden, logits;
  std::vector<int> out;
  out.reserve(ex.num_tokens());
  for (std::size_t t = 0; t < ex.num_tokens(); ++t) {
    detail::forward_token(spec, L, state.theta.values(), ex.token(t, spec.input_dim), hidden, logits);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace gradmix
