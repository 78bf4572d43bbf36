#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "contrastcat/encoder/encoder.hpp"
#include "contrastcat/util/binary_io.hpp"
#include "contrastcat/util/error.hpp"
#include "support.hpp"

namespace ccat {
namespace {

using nk::Matrix;

// Loop-level forward over an unpadded input, written independently of the
// tape ops. Returns the logits.
std::vector<double> naive_logits(const Encoder& model, const std::vector<TokenId>& ids) {
  const auto& cfg = model.config();
  const auto& w = model.weights();
  const std::size_t T = ids.size(), n = cfg.model_dim, d = cfg.head_dim;
  using Rows = std::vector<std::vector<double>>;
  auto affine = [](const Rows& x, const Matrix& W, const Matrix& b) {
    Rows y(x.size(), std::vector<double>(W.cols()));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t o = 0; o < W.cols(); ++o) {
        double s = b(0, o);
        for (std::size_t k = 0; k < W.rows(); ++k) s += x[i][k] * W(k, o);
        y[i][o] = s;
      }
    return y;
  };
  auto norm = [](Rows x, const Matrix& g, const Matrix& b) {
    for (auto& row : x) {
      double mean = 0, var = 0;
      for (double v : row) mean += v;
      mean /= static_cast<double>(row.size());
      for (double v : row) var += (v - mean) * (v - mean);
      var /= static_cast<double>(row.size());
      for (std::size_t j = 0; j < row.size(); ++j)
        row[j] = (row[j] - mean) / std::sqrt(var + kLayerNormEps) * g(0, j) + b(0, j);
    }
    return x;
  };
  Rows a(T, std::vector<double>(n));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a[i][j] = w.token_embedding(ids[i], j) + w.position_embedding(i, j);
  for (const auto& lw : w.layers) {
    const Rows q = affine(a, lw.wq, lw.bq), k = affine(a, lw.wk, lw.bk), v = affine(a, lw.wv, lw.bv);
    Rows concat(T, std::vector<double>(n, 0.0));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(T);
        double mx = -1e300;
        for (std::size_t j = 0; j < T; ++j) {
          double dot = 0;
          for (std::size_t e = 0; e < d; ++e) dot += q[i][h * d + e] * k[j][h * d + e];
          s[j] = dot / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (double& x : s) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t e = 0; e < d; ++e) concat[i][h * d + e] += s[j] / z * v[j][h * d + e];
      }
    }
    Rows proj = affine(concat, lw.wo, lw.bo);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < n; ++j) proj[i][j] += a[i][j];
    const Rows a_hat = norm(proj, lw.ln1_gain, lw.ln1_bias);
    Rows hidden = affine(a_hat, lw.w1, lw.b1);
    for (auto& row : hidden)
      for (double& x : row)
        x = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    Rows ffn = affine(hidden, lw.w2, lw.b2);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < n; ++j) ffn[i][j] += a_hat[i][j];
    a = norm(ffn, lw.ln2_gain, lw.ln2_bias);
  }
  return affine(Rows{a[0]}, w.head_w, w.head_b)[0];
}

TEST(EncoderConfig, RejectsInconsistentHeadSplit) {
  EncoderConfig cfg;
  cfg.vocab_size = 10;
  cfg.head_dim = 15;
  EXPECT_THROW(cfg.validate(), InvariantError);
  cfg.head_dim = 16;
  cfg.classes = 1;
  EXPECT_THROW(cfg.validate(), InvariantError);
}

TEST(EncoderForward, SingleLayerHandSetWeightsMatchLoopTrace) {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.model_dim = 2;
  cfg.head_dim = 2;
  cfg.ffn_dim = 2;
  cfg.vocab_size = 4;
  cfg.max_len = 2;
  cfg.classes = 2;
  EncoderWeights w = init_weights(cfg);
  w.token_embedding = Matrix{{0, 0}, {1.0, -0.5}, {0, 0}, {0.3, 0.8}};
  w.position_embedding = Matrix{{0.1, 0.0}, {0.0, -0.2}};
  auto& l = w.layers[0];
  l.wq = Matrix{{1, 0.5}, {-0.5, 1}};
  l.wk = Matrix{{0.7, 0}, {0.2, 1.1}};
  l.wv = Matrix{{1, -1}, {0.5, 0.5}};
  l.wo = Matrix{{0.9, 0.1}, {-0.3, 1.2}};
  l.bq = Matrix{{0.05, -0.05}};
  l.bo = Matrix{{0.1, 0.2}};
  l.w1 = Matrix{{1.5, -1}, {0.25, 2}};
  l.b1 = Matrix{{0, 0.3}};
  l.w2 = Matrix{{0.6, -0.4}, {1, 0.2}};
  l.ln1_gain = Matrix{{1.2, 0.8}};
  l.ln2_bias = Matrix{{0.1, -0.1}};
  w.head_w = Matrix{{1, -1}, {0.5, 2}};
  w.head_b = Matrix{{0.2, -0.2}};
  const Encoder model(cfg, w);

  const TokenSequence seq = test::make_sequence({3});
  const auto trace = model.forward(seq);
  const auto expected = naive_logits(model, {Vocabulary::kCls, 3});
  ASSERT_EQ(trace.logits.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(trace.logits[c], expected[c], 1e-10);
}

TEST(EncoderForward, RandomModelsMatchLoopTrace) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Encoder model = test::tiny_encoder(2, 2, 8, 6, seed);
    const auto seq = test::random_sequence(rng, 12, 6, 1 + seed % 5);
    const std::vector<TokenId> ids(seq.ids.begin(), seq.ids.begin() + seq.active_length());
    const auto trace = model.forward(seq);
    const auto expected = naive_logits(model, ids);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(trace.logits[c], expected[c], 1e-10);
  }
}

TEST(EncoderForward, TraceIsNormalisedAndShaped) {
  std::mt19937_64 rng(8);
  const Encoder model = test::tiny_encoder(3, 2, 8, 10, 3, 12, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = test::random_sequence(rng, 12, 10, trial % 9);
    const auto trace = model.forward(seq);
    const std::size_t T = seq.active_length();
    ASSERT_EQ(trace.length(), T);
    ASSERT_EQ(trace.layers(), 3u);
    for (const auto& layer : trace.attentions) {
      ASSERT_EQ(layer.size(), 2u);
      for (const auto& a : layer) {
        ASSERT_EQ(a.rows(), T);
        for (std::size_t r = 0; r < T; ++r) {
          double s = 0;
          for (double v : a.row(r)) s += v;
          EXPECT_NEAR(s, 1.0, 1e-10);
        }
      }
    }
    double total = 0;
    for (double p : trace.probs) {
      EXPECT_GT(p, 0.0);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(EncoderForward, PadTailIsInvisible) {
  const Encoder model = test::tiny_encoder(2, 2, 8, 8, 9);
  TokenSequence short_seq = test::make_sequence({4, 5, 6});
  TokenSequence padded = short_seq;
  for (int i = 0; i < 4; ++i) {
    padded.ids.push_back(Vocabulary::kPad);
    padded.kinds.push_back(TokenKind::kPad);
  }
  EXPECT_EQ(model.forward(short_seq).logits, model.forward(padded).logits);
}

TEST(EncoderForward, DuplicateTokensWithoutPositionsShareActivations) {
  Encoder model = test::tiny_encoder(2, 2, 8, 6, 5);
  model.mutable_weights().position_embedding.fill(0.0);
  const auto trace = model.forward(test::make_sequence({7, 7, 7}));
  for (const auto& a : trace.activations) {
    for (std::size_t r = 2; r < 4; ++r)
      for (std::size_t j = 0; j < a.cols(); ++j) EXPECT_EQ(a(r, j), a(1, j));
  }
}

TEST(EncoderForward, DeterministicBitwise) {
  std::mt19937_64 rng(2);
  const Encoder model = test::tiny_encoder(2, 2, 8, 8, 1);
  const auto seq = test::random_sequence(rng, 12, 8, 5);
  const auto a = model.forward(seq);
  const auto b = model.forward(seq);
  EXPECT_EQ(a.logits, b.logits);
  for (std::size_t l = 0; l < a.layers(); ++l) EXPECT_EQ(a.activations[l], b.activations[l]);
}

TEST(EncoderForward, RejectsBadInput) {
  const Encoder model = test::tiny_encoder(1, 1, 4, 4, 1);
  EXPECT_THROW(model.forward(test::make_sequence({3, 4, 5, 6})), InputError);
  EXPECT_THROW(model.forward(test::make_sequence({99})), InputError);
  EXPECT_THROW(model.class_gradients(test::make_sequence({3}), 2), InputError);
}

// Central differences on A^l through logits_from_layer, norm-based relative
// error per layer.
double layer_gradient_error(const Encoder& model, const TokenSequence& seq, ClassId c,
                            std::size_t layer) {
  const auto trace = model.forward(seq);
  const auto grads = model.class_gradients(seq, c);
  Matrix a = trace.activations[layer - 1];
  const Matrix& g = grads.grads[layer - 1];
  EXPECT_TRUE(g.same_shape(a));
  const double h = 1e-5;
  double diff = 0, na = 0, nn = 0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    const double x0 = a.data()[e];
    a.data()[e] = x0 + h;
    const double fp = model.logits_from_layer(seq, layer, a)[c];
    a.data()[e] = x0 - h;
    const double fm = model.logits_from_layer(seq, layer, a)[c];
    a.data()[e] = x0;
    const double numeric = (fp - fm) / (2 * h);
    diff += std::pow(g.data()[e] - numeric, 2);
    na += g.data()[e] * g.data()[e];
    nn += numeric * numeric;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

TEST(ClassGradients, MatchFiniteDifferencesAtEveryLayer) {
  std::mt19937_64 rng(17);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Encoder model = test::tiny_encoder(2, 2, 8, 4, seed);
    const auto seq = test::random_sequence(rng, 12, 4, 3);
    for (ClassId c = 0; c < 2; ++c)
      for (std::size_t l = 1; l <= 2; ++l)
        EXPECT_LE(layer_gradient_error(model, seq, c, l), 1e-4)
            << "seed " << seed << " class " << c << " layer " << l;
  }
}

TEST(ClassGradients, PaddedInputMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  const Encoder model = test::tiny_encoder(3, 2, 8, 8, 6);
  const auto seq = test::random_sequence(rng, 12, 8, 4);
  for (std::size_t l = 1; l <= 3; ++l) EXPECT_LE(layer_gradient_error(model, seq, 1, l), 1e-4);
}

TEST(ClassGradients, ProbabilityGradientsSumToZeroOverClasses) {
  std::mt19937_64 rng(29);
  const Encoder model = test::tiny_encoder(2, 2, 8, 6, 3, 12, 3);
  const auto seq = test::random_sequence(rng, 12, 6, 4);
  std::vector<Matrix> total;
  for (ClassId c = 0; c < 3; ++c) {
    const auto g = model.class_gradients(seq, c, GradientTarget::kProbability);
    if (total.empty()) total = g.grads;
    else
      for (std::size_t l = 0; l < total.size(); ++l) total[l] += g.grads[l];
  }
  for (const auto& m : total) EXPECT_LE(nk::max_abs(m), 1e-12);
}

TEST(ClassGradients, AnalyzeAgreesWithSeparateCalls) {
  std::mt19937_64 rng(31);
  const Encoder model = test::tiny_encoder(2, 2, 8, 6, 4);
  const auto seq = test::random_sequence(rng, 12, 6, 5);
  const auto an = model.analyze(seq, 1);
  const auto g = model.class_gradients(seq, 1);
  EXPECT_EQ(an.trace.logits, model.forward(seq).logits);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(an.activation_grads.grads[l], g.grads[l]);
  ASSERT_EQ(an.attention_grads.size(), 2u);
  EXPECT_EQ(an.attention_grads[0].size(), 2u);
}

TEST(ModelFile, RoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  const Encoder model = test::tiny_encoder(2, 2, 8, 8, 12);
  const auto path = (std::filesystem::temp_directory_path() / "ccat_model_rt.bin").string();
  save_model(model, path);
  const Encoder loaded = load_model(path);
  EXPECT_EQ(serialize_model(loaded), serialize_model(model));
  EXPECT_EQ(loaded.fingerprint(), model.fingerprint());
  const auto seq = test::random_sequence(rng, 12, 8, 6);
  EXPECT_EQ(loaded.forward(seq).logits, model.forward(seq).logits);
  std::filesystem::remove(path);
}

TEST(ModelFile, CorruptionIsDetected) {
  const Encoder model = test::tiny_encoder(1, 2, 4, 4, 1);
  const auto bytes = serialize_model(model);

  auto bad_magic = bytes;
  bad_magic[0] ^= 0xff;
  EXPECT_THROW(deserialize_model(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[8] += 1;
  EXPECT_THROW(deserialize_model(bad_version), FormatError);

  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(deserialize_model(truncated), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), FormatError);

  // heads is the second config field; 4 != 3 * 2.
  auto bad_heads = bytes;
  const std::uint64_t three = 3;
  std::memcpy(bad_heads.data() + 20, &three, sizeof three);
  EXPECT_THROW(deserialize_model(bad_heads), InvariantError);
}

Corpus small_corpus(std::uint64_t seed) { return synth_sentiment(seed, 160, 40, 12); }

EncoderConfig small_config(const Corpus& corpus) {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.model_dim = 8;
  cfg.head_dim = 4;
  cfg.ffn_dim = 16;
  cfg.vocab_size = corpus.vocab.size();
  cfg.max_len = corpus.max_len;
  return cfg;
}

TEST(Training, SameSeedGivesBitwiseIdenticalWeights) {
  const Corpus corpus = small_corpus(3);
  TrainingConfig tc;
  tc.epochs = 1;
  Encoder a(small_config(corpus)), b(small_config(corpus));
  const auto ra = train(a, corpus, tc);
  const auto rb = train(b, corpus, tc);
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
}

TEST(Training, ConstantLabelsAreLearnedPerfectly) {
  Corpus corpus = small_corpus(4);
  for (auto* split : {&corpus.train, &corpus.test})
    for (auto& s : *split) s.label = 0;
  TrainingConfig tc;
  tc.learning_rate = 1e-2;
  Encoder model(small_config(corpus));
  const auto report = train(model, corpus, tc);
  EXPECT_EQ(report.test_accuracy, 1.0);
  EXPECT_EQ(report.epoch_loss.size(), tc.epochs);
  EXPECT_LT(report.epoch_loss.back(), report.epoch_loss.front());
}

TEST(Training, RejectsEmptyOrMislabelledCorpus) {
  Corpus corpus = small_corpus(5);
  Encoder model(small_config(corpus));
  Corpus empty = corpus;
  empty.train.clear();
  EXPECT_THROW(train(model, empty, {}), InputError);
  corpus.train[3].label = 7;
  EXPECT_THROW(train(model, corpus, {}), InputError);
}

TEST(Training, ToyModelPassesAccuracyGate) {
  const auto& corpus = test::toy_corpus();
  EXPECT_GE(accuracy(test::toy_model(), corpus.test), 0.90);
}

}  // namespace
}  // namespace ccat
