#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/encoder/encoder.hpp"
#include "contrastcat/numkernel/matrix.hpp"
#include "contrastcat/reflib/reflib.hpp"

namespace ccat::test {

nk::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                         double lo = -2.0, double hi = 2.0);

/// Randomly initialised encoder with a small vocabulary.
Encoder tiny_encoder(std::size_t layers, std::size_t heads, std::size_t model_dim,
                     std::size_t max_len, std::uint64_t seed, std::size_t vocab = 12,
                     std::size_t classes = 2);

/// CLS, `ordinary` random ids in [3, vocab), then PAD up to max_len.
TokenSequence random_sequence(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len,
                              std::size_t ordinary);

/// |a - b| / max(|a|, |b|, floor).
double rel_err(double a, double b, double floor = 1e-6);

/// synth_sentiment(1, 2000, 500): the acceptance corpus.
const Corpus& toy_corpus();

/// Default encoder trained with the default TrainingConfig on toy_corpus().
/// The weights are cached under the test build directory so only the first
/// test binary of a ctest run pays for training.
const Encoder& toy_model();

/// build_library(toy_model(), toy_corpus(), default gamma, default K).
const ReferenceLibrary& toy_library();

/// Probabilities supplied by a function; lets metric tests pin y and y~.
class FnClassifier : public Classifier {
 public:
  using Fn = std::function<std::vector<double>(const TokenSequence&)>;
  FnClassifier(std::size_t classes, Fn fn) : classes_(classes), fn_(std::move(fn)) {}
  std::vector<double> probabilities(const TokenSequence& t) const override { return fn_(t); }
  std::size_t num_classes() const override { return classes_; }

 private:
  std::size_t classes_;
  Fn fn_;
};

/// Sequence with the given ordinary ids (no PAD tail).
TokenSequence make_sequence(const std::vector<TokenId>& ordinary_ids);

}  // namespace ccat::test
