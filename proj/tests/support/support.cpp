#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "contrastcat/util/error.hpp"

namespace ccat::test {

namespace fs = std::filesystem;

nk::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo,
                         double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  nk::Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

Encoder tiny_encoder(std::size_t layers, std::size_t heads, std::size_t model_dim,
                     std::size_t max_len, std::uint64_t seed, std::size_t vocab,
                     std::size_t classes) {
  EncoderConfig cfg;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.model_dim = model_dim;
  cfg.head_dim = model_dim / heads;
  cfg.ffn_dim = 2 * model_dim;
  cfg.vocab_size = vocab;
  cfg.max_len = max_len;
  cfg.classes = classes;
  cfg.seed = seed;
  return Encoder(cfg);
}

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len,
                              std::size_t ordinary) {
  std::uniform_int_distribution<TokenId> id(3, static_cast<TokenId>(vocab - 1));
  TokenSequence s;
  s.ids.push_back(Vocabulary::kCls);
  s.kinds.push_back(TokenKind::kCls);
  for (std::size_t i = 0; i < ordinary; ++i) {
    s.ids.push_back(id(rng));
    s.kinds.push_back(TokenKind::kOrdinary);
  }
  while (s.ids.size() < max_len) {
    s.ids.push_back(Vocabulary::kPad);
    s.kinds.push_back(TokenKind::kPad);
  }
  return s;
}

TokenSequence make_sequence(const std::vector<TokenId>& ordinary_ids) {
  TokenSequence s;
  s.ids.push_back(Vocabulary::kCls);
  s.kinds.push_back(TokenKind::kCls);
  for (TokenId t : ordinary_ids) {
    s.ids.push_back(t);
    s.kinds.push_back(TokenKind::kOrdinary);
  }
  return s;
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

const Corpus& toy_corpus() {
  static const Corpus corpus = synth_sentiment(1, 2000, 500);
  return corpus;
}

const Encoder& toy_model() {
  static const Encoder model = [] {
    const Corpus& corpus = toy_corpus();
    EncoderConfig cfg;
    cfg.vocab_size = corpus.vocab.size();
    cfg.max_len = corpus.max_len;
    cfg.classes = corpus.classes;
    const fs::path cache = fs::path(CCAT_TEST_CACHE_DIR) / "toy_model.bin";
    fs::create_directories(cache.parent_path());
    // One trainer per ctest run; concurrent test processes wait on the lock
    // and then load the cached weights.
    const int lock = ::open((cache.string() + ".lock").c_str(), O_CREAT | O_RDWR, 0644);
    if (lock >= 0) ::flock(lock, LOCK_EX);
    struct Unlock {
      int fd;
      ~Unlock() {
        if (fd >= 0) ::close(fd);
      }
    } unlock{lock};
    if (fs::exists(cache)) {
      try {
        Encoder m = load_model(cache.string());
        if (m.config().vocab_size == cfg.vocab_size) return m;
      } catch (const Error&) {
      }
    }
    Encoder m(cfg);
    train(m, corpus, TrainingConfig{});
    const fs::path tmp = cache.string() + ".tmp" + std::to_string(::getpid());
    save_model(m, tmp.string());
    fs::rename(tmp, cache);
    return m;
  }();
  return model;
}

const ReferenceLibrary& toy_library() {
  static const ReferenceLibrary lib =
      build_library(toy_model(), toy_corpus(), kDefaultGamma, kDefaultReferencesPerClass);
  return lib;
}

}  // namespace ccat::test
