#include "contrastcat/encoder/encoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <utility>

#include "contrastcat/numkernel/ops.hpp"
#include "contrastcat/util/error.hpp"
#include "contrastcat/util/hash.hpp"

namespace ccat {

using nk::Matrix;
using nk::Tape;
using nk::Var;

void EncoderConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || head_dim < 1 || ffn_dim < 1 ||
      vocab_size < 1 || max_len < 1) {
    throw InvariantError("encoder config: all counts must be >= 1");
  }
  if (model_dim != heads * head_dim) {
    throw InvariantError("encoder config: model_dim " + std::to_string(model_dim) +
                         " != heads " + std::to_string(heads) + " * head_dim " +
                         std::to_string(head_dim));
  }
  if (classes < 2) throw InvariantError("encoder config: need at least 2 classes");
}

ClassId ForwardTrace::predicted() const {
  return static_cast<ClassId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

EncoderWeights init_weights(const EncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto normal = [&](std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = d(rng);
    return m;
  };
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    return normal(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
  };
  const std::size_t n = cfg.model_dim;
  EncoderWeights w;
  w.token_embedding = normal(cfg.vocab_size, n, 0.5);
  w.position_embedding = normal(cfg.max_len, n, 0.1);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerWeights lw;
    lw.wq = glorot(n, n);
    lw.bq = Matrix(1, n);
    lw.wk = glorot(n, n);
    lw.bk = Matrix(1, n);
    lw.wv = glorot(n, n);
    lw.bv = Matrix(1, n);
    lw.wo = glorot(n, n);
    lw.bo = Matrix(1, n);
    lw.ln1_gain = Matrix(1, n, 1.0);
    lw.ln1_bias = Matrix(1, n);
    lw.w1 = glorot(n, cfg.ffn_dim);
    lw.b1 = Matrix(1, cfg.ffn_dim);
    lw.w2 = glorot(cfg.ffn_dim, n);
    lw.b2 = Matrix(1, n);
    lw.ln2_gain = Matrix(1, n, 1.0);
    lw.ln2_bias = Matrix(1, n);
    w.layers.push_back(std::move(lw));
  }
  w.head_w = glorot(n, cfg.classes);
  w.head_b = Matrix(1, cfg.classes);
  return w;
}

namespace {

void check_weight_shapes(const EncoderConfig& cfg, const EncoderWeights& w) {
  auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw InvariantError(std::string("weight ") + name + " has shape " + m.shape_string() +
                           ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  };
  const std::size_t n = cfg.model_dim;
  expect(w.token_embedding, cfg.vocab_size, n, "token_embedding");
  expect(w.position_embedding, cfg.max_len, n, "position_embedding");
  if (w.layers.size() != cfg.layers) throw InvariantError("layer count does not match config");
  for (const auto& l : w.layers) {
    for (const Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo}) expect(*m, n, n, "attention");
    for (const Matrix* m : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_gain, &l.ln1_bias, &l.b2,
                            &l.ln2_gain, &l.ln2_bias})
      expect(*m, 1, n, "bias/norm");
    expect(l.w1, n, cfg.ffn_dim, "w1");
    expect(l.b1, 1, cfg.ffn_dim, "b1");
    expect(l.w2, cfg.ffn_dim, n, "w2");
  }
  expect(w.head_w, n, cfg.classes, "head_w");
  expect(w.head_b, 1, cfg.classes, "head_b");
}

// Records one forward pass on a tape and keeps handles to every tap.
class Graph {
 public:
  Graph(const Encoder& model, bool train_params) : model_(model), train_params_(train_params) {}

  Var param(const Matrix& m) {
    Var v = tape.parameter(m, train_params_);
    if (train_params_) params.emplace_back(&m, v);
    return v;
  }

  // Embeddings for the active prefix; returns A^0.
  Var embed(const TokenSequence& tokens, std::size_t length) {
    std::vector<std::size_t> ids(length);
    std::vector<std::size_t> pos(length);
    for (std::size_t i = 0; i < length; ++i) {
      ids[i] = tokens.ids[i];
      pos[i] = i;
    }
    const auto& w = model_.weights();
    Var tok = nk::gather_rows(tape, param(w.token_embedding), ids);
    Var p = nk::gather_rows(tape, param(w.position_embedding), pos);
    return nk::add(tape, tok, p);
  }

  Var layer(std::size_t l, Var x) {
    const auto& cfg = model_.config();
    const auto& w = model_.weights().layers[l];
    Var q = nk::add_row(tape, nk::matmul(tape, x, param(w.wq)), param(w.bq));
    Var k = nk::add_row(tape, nk::matmul(tape, x, param(w.wk)), param(w.bk));
    Var v = nk::add_row(tape, nk::matmul(tape, x, param(w.wv)), param(w.bv));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
    std::vector<Var> heads;
    std::vector<Var> maps;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t off = h * cfg.head_dim;
      Var qh = nk::slice_cols(tape, q, off, cfg.head_dim);
      Var kh = nk::slice_cols(tape, k, off, cfg.head_dim);
      Var vh = nk::slice_cols(tape, v, off, cfg.head_dim);
      Var alpha = nk::softmax_rows(tape, nk::matmul_nt(tape, qh, kh), inv_sqrt_d, key_mask);
      maps.push_back(alpha);
      heads.push_back(nk::matmul(tape, alpha, vh));
    }
    attentions.push_back(std::move(maps));
    Var concat = nk::concat_cols(tape, heads);
    Var projected = nk::add_row(tape, nk::matmul(tape, concat, param(w.wo)), param(w.bo));
    Var a_hat = nk::layernorm(tape, nk::add(tape, projected, x), param(w.ln1_gain),
                              param(w.ln1_bias), kLayerNormEps);
    Var hidden =
        nk::gelu(tape, nk::add_row(tape, nk::matmul(tape, a_hat, param(w.w1)), param(w.b1)));
    Var ffn = nk::add_row(tape, nk::matmul(tape, hidden, param(w.w2)), param(w.b2));
    Var out = nk::layernorm(tape, nk::add(tape, ffn, a_hat), param(w.ln2_gain),
                            param(w.ln2_bias), kLayerNormEps);
    activations.push_back(out);
    return out;
  }

  Var head(Var last) {
    const auto& w = model_.weights();
    Var cls = nk::take_rows(tape, last, 1);
    logits = nk::add_row(tape, nk::matmul(tape, cls, param(w.head_w)), param(w.head_b));
    return logits;
  }

  void set_mask(const TokenSequence& tokens, std::size_t length) {
    mask_.reset(new bool[length]);
    for (std::size_t i = 0; i < length; ++i) mask_[i] = tokens.kinds[i] != TokenKind::kPad;
    key_mask = std::span<const bool>(mask_.get(), length);
  }

  Tape tape;
  std::span<const bool> key_mask;
  std::vector<Var> activations;
  std::vector<std::vector<Var>> attentions;
  Var logits;
  std::vector<std::pair<const Matrix*, Var>> params;

 private:
  const Encoder& model_;
  bool train_params_;
  // PAD keys are masked out of attention.
  std::unique_ptr<bool[]> mask_;
};

std::size_t checked_length(const Encoder& model, const TokenSequence& tokens) {
  const auto& cfg = model.config();
  if (tokens.ids.size() != tokens.kinds.size()) throw InputError("token ids and kinds differ");
  if (tokens.ids.empty()) throw InputError("empty token sequence");
  const std::size_t length = tokens.active_length();
  if (length > cfg.max_len) {
    throw InputError("input of length " + std::to_string(length) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  for (std::size_t i = 0; i < length; ++i) {
    if (tokens.ids[i] >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(tokens.ids[i]) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }
  return length;
}

std::vector<double> row_values(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

ForwardTrace collect_trace(const Graph& g, const TokenSequence& tokens, std::size_t length) {
  ForwardTrace trace;
  for (Var a : g.activations) trace.activations.push_back(g.tape.value(a));
  for (const auto& maps : g.attentions) {
    std::vector<Matrix> layer;
    for (Var m : maps) layer.push_back(g.tape.value(m));
    trace.attentions.push_back(std::move(layer));
  }
  trace.logits = row_values(g.tape.value(g.logits));
  trace.probs = row_values(nk::softmax_rows(g.tape.value(g.logits), 1.0));
  trace.kinds.assign(tokens.kinds.begin(), tokens.kinds.begin() + static_cast<std::ptrdiff_t>(length));
  return trace;
}

}  // namespace

Encoder::Encoder(EncoderConfig config) : config_(config), weights_(init_weights(config)) {}

Encoder::Encoder(EncoderConfig config, EncoderWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  check_weight_shapes(config_, weights_);
}

ForwardTrace Encoder::forward(const TokenSequence& tokens) const {
  const std::size_t length = checked_length(*this, tokens);
  Graph g(*this, false);
  g.set_mask(tokens, length);
  Var x = g.embed(tokens, length);
  for (std::size_t l = 0; l < config_.layers; ++l) x = g.layer(l, x);
  g.head(x);
  return collect_trace(g, tokens, length);
}

std::vector<double> Encoder::probabilities(const TokenSequence& tokens) const {
  return forward(tokens).probs;
}

Analysis Encoder::analyze(const TokenSequence& tokens, ClassId c, GradientTarget target) const {
  if (c >= config_.classes) {
    throw InputError("class id " + std::to_string(c) + " outside [0, " +
                     std::to_string(config_.classes) + ")");
  }
  const std::size_t length = checked_length(*this, tokens);
  Graph g(*this, false);
  g.set_mask(tokens, length);
  Var x0 = g.embed(tokens, length);
  // Re-root the graph at a gradient-carrying copy of A^0 so every
  // downstream activation and attention map receives a gradient.
  Var x = g.tape.variable(g.tape.value(x0));
  for (std::size_t l = 0; l < config_.layers; ++l) x = g.layer(l, x);
  Var logits = g.head(x);
  Var score = target == GradientTarget::kLogit
                  ? nk::pick(g.tape, logits, 0, c)
                  : nk::pick(g.tape, nk::softmax_row_vector(g.tape, logits), 0, c);
  Analysis out;
  out.trace = collect_trace(g, tokens, length);
  g.tape.backward(score);
  out.activation_grads.target_class = c;
  for (Var a : g.activations) out.activation_grads.grads.push_back(g.tape.grad(a));
  for (const auto& maps : g.attentions) {
    std::vector<Matrix> layer;
    for (Var m : maps) layer.push_back(g.tape.grad(m));
    out.attention_grads.push_back(std::move(layer));
  }
  return out;
}

GradientTrace Encoder::class_gradients(const TokenSequence& tokens, ClassId c,
                                       GradientTarget target) const {
  return analyze(tokens, c, target).activation_grads;
}

std::vector<double> Encoder::logits_from_layer(const TokenSequence& tokens, std::size_t layer,
                                               const Matrix& activation) const {
  const std::size_t length = checked_length(*this, tokens);
  if (layer < 1 || layer > config_.layers) throw InputError("layer index out of range");
  if (activation.rows() != length || activation.cols() != config_.model_dim) {
    throw ShapeError("activation shape " + activation.shape_string() + " does not match input");
  }
  Graph g(*this, false);
  g.set_mask(tokens, length);
  Var x = g.tape.constant(activation);
  for (std::size_t l = layer; l < config_.layers; ++l) x = g.layer(l, x);
  return row_values(g.tape.value(g.head(x)));
}

double accuracy(const Classifier& model, std::span<const TokenSequence> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    const auto p = model.probabilities(s);
    const auto pred = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
    if (s.label && *s.label == pred) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

}  // namespace

TrainingReport train(Encoder& model, const Corpus& corpus, const TrainingConfig& config) {
  if (corpus.train.empty()) throw InputError("training corpus is empty");
  for (const auto& s : corpus.train) {
    if (!s.label || *s.label >= model.config().classes) {
      throw InputError("training sample has a missing or out-of-range label");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<Matrix*> params;
  model.mutable_weights().for_each([&](Matrix& m) { params.push_back(&m); });
  AdamState adam;
  for (Matrix* p : params) {
    adam.m.emplace_back(p->rows(), p->cols());
    adam.v.emplace_back(p->rows(), p->cols());
  }
  std::vector<Matrix> grads;
  for (Matrix* p : params) grads.emplace_back(p->rows(), p->cols());
  // Weight pointer -> slot, so tape param handles can be routed to grads.
  auto slot_of = [&](const Matrix* m) {
    return static_cast<std::size_t>(std::find(params.begin(), params.end(), m) - params.begin());
  };

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(corpus.train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainingReport report;
  const auto& cfg = model.config();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      for (auto& g : grads) g.fill(0.0);
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const auto& sample = corpus.train[order[bi]];
        const std::size_t length = checked_length(model, sample);
        Graph g(model, true);
        g.set_mask(sample, length);
        Var x = g.embed(sample, length);
        for (std::size_t l = 0; l < cfg.layers; ++l) x = g.layer(l, x);
        Var loss = nk::cross_entropy(g.tape, g.head(x), *sample.label);
        loss_sum += g.tape.value(loss)(0, 0);
        g.tape.backward(loss);
        for (const auto& [w, v] : g.params) grads[slot_of(w)] += g.tape.grad(v);
      }
      const double inv_batch = 1.0 / static_cast<double>(b1 - b0);
      ++adam.step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto g = grads[i].data();
        auto m = adam.m[i].data();
        auto v = adam.v[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
          const double gj = g[j] * inv_batch + config.weight_decay * p[j];
          m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
          v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
          p[j] -= config.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config.adam_eps);
        }
      }
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  report.train_accuracy = accuracy(model, corpus.train);
  report.test_accuracy = accuracy(model, corpus.test);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace ccat
