#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/numkernel/matrix.hpp"

namespace ccat {

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t model_dim = 64;
  std::size_t head_dim = 16;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  std::size_t classes = 2;
  std::uint64_t seed = 7;

  /// Throws InvariantError when model_dim != heads * head_dim, a count is
  /// zero, or classes < 2.
  void validate() const;
};

inline constexpr double kLayerNormEps = 1e-5;

struct LayerWeights {
  nk::Matrix wq, bq, wk, bk, wv, bv;  // n×n, 1×n
  nk::Matrix wo, bo;                  // W̃: n×n, 1×n
  nk::Matrix ln1_gain, ln1_bias;
  nk::Matrix w1, b1;  // n×ffn, 1×ffn
  nk::Matrix w2, b2;  // ffn×n, 1×n
  nk::Matrix ln2_gain, ln2_bias;
};

struct EncoderWeights {
  nk::Matrix token_embedding;     // vocab×n
  nk::Matrix position_embedding;  // max_len×n
  std::vector<LayerWeights> layers;
  nk::Matrix head_w, head_b;  // n×C, 1×C

  /// Visits every parameter in a fixed order (the serialization order).
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(token_embedding);
    fn(position_embedding);
    for (auto& l : layers) {
      for (nk::Matrix* m : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain,
                            &l.ln1_bias, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias})
        fn(*m);
    }
    fn(head_w);
    fn(head_b);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<EncoderWeights*>(this)->for_each([&](nk::Matrix& m) { fn(std::as_const(m)); });
  }
};

/// Everything captured from one forward pass over the active prefix of a
/// token sequence (T = active length).
struct ForwardTrace {
  std::vector<nk::Matrix> activations;              // [layer] T×n, layers 1..L
  std::vector<std::vector<nk::Matrix>> attentions;  // [layer][head] T×T
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<TokenKind> kinds;  // first T kinds of the input

  std::size_t length() const noexcept { return kinds.size(); }
  std::size_t layers() const noexcept { return activations.size(); }
  ClassId predicted() const;
};

struct GradientTrace {
  std::vector<nk::Matrix> grads;  // [layer] T×n, d f_c / d A^l
  ClassId target_class = 0;
};

/// Which scalar the activation gradients differentiate.
enum class GradientTarget { kLogit, kProbability };

/// Forward trace plus gradients of one class score with respect to every
/// layer activation and every attention map, from one forward and one
/// backward pass.
struct Analysis {
  ForwardTrace trace;
  GradientTrace activation_grads;
  std::vector<std::vector<nk::Matrix>> attention_grads;  // [layer][head] T×T
};

/// Anything that maps a token sequence to class probabilities. The
/// perturbation metrics only need this, which lets tests plug in stubs.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<double> probabilities(const TokenSequence& tokens) const = 0;
  virtual std::size_t num_classes() const = 0;
};

class Encoder : public Classifier {
 public:
  /// Random initialisation from config.seed.
  explicit Encoder(EncoderConfig config);
  Encoder(EncoderConfig config, EncoderWeights weights);

  const EncoderConfig& config() const noexcept { return config_; }
  const EncoderWeights& weights() const noexcept { return weights_; }
  EncoderWeights& mutable_weights() noexcept { return weights_; }

  /// Throws InputError for over-length input or ids outside the vocabulary.
  ForwardTrace forward(const TokenSequence& tokens) const;

  GradientTrace class_gradients(const TokenSequence& tokens, ClassId c,
                                GradientTarget target = GradientTarget::kLogit) const;

  Analysis analyze(const TokenSequence& tokens, ClassId c,
                   GradientTarget target = GradientTarget::kLogit) const;

  /// Runs layers layer+1..L and the head starting from a given activation
  /// for layer `layer` (1-based). Used for finite-difference checks.
  std::vector<double> logits_from_layer(const TokenSequence& tokens, std::size_t layer,
                                        const nk::Matrix& activation) const;

  std::vector<double> probabilities(const TokenSequence& tokens) const override;
  std::size_t num_classes() const override { return config_.classes; }

  /// Hash of the serialized model bytes.
  std::uint64_t fingerprint() const;

 private:
  EncoderConfig config_;
  EncoderWeights weights_;
};

EncoderWeights init_weights(const EncoderConfig& config);

// Versioned little-endian binary format:
//   magic "CCATMODL", u32 version, u64 config fields, then for every
//   parameter in EncoderWeights::for_each order: u64 rows, u64 cols, f64 data.
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const Encoder& model);
Encoder deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Encoder& model, const std::string& path);
/// Throws FormatError on bad magic, version mismatch or truncation;
/// InvariantError when the stored config is inconsistent.
Encoder load_model(const std::string& path);

struct TrainingConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 11;
};

struct TrainingReport {
  std::vector<double> epoch_loss;  // mean train cross-entropy per epoch
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double seconds = 0.0;
};

double accuracy(const Classifier& model, std::span<const TokenSequence> samples);

/// Minimises cross-entropy with Adam. Single-threaded and deterministic for
/// a given model seed and config.seed. Throws InputError on an empty train
/// split or labels outside [0, classes).
TrainingReport train(Encoder& model, const Corpus& corpus, const TrainingConfig& config);

}  // namespace ccat
