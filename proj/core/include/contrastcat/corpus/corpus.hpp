#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ccat {

using TokenId = std::uint32_t;
using ClassId = std::size_t;

enum class TokenKind : std::uint8_t { kCls, kPad, kOrdinary };

/// One classified text: CLS at position 0, ordinary tokens, then PAD up to
/// the corpus max length.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<TokenKind> kinds;
  std::string text;
  std::optional<ClassId> label;

  std::size_t size() const noexcept { return ids.size(); }
  /// Positions up to and including the last non-PAD one. Trailing PAD is
  /// masked out of attention, so the model only ever computes this prefix.
  std::size_t active_length() const noexcept;
  std::size_t ordinary_count() const noexcept;
  /// Positions of ordinary tokens, ascending.
  std::vector<std::size_t> ordinary_positions() const;

  /// Checks the tokenized-input invariants (CLS first, nothing ordinary after
  /// the first PAD, ids/kinds aligned). Throws InvariantError.
  void validate() const;
};

/// Copy of seq with the given positions replaced by PAD. Length and all other
/// positions are unchanged. Special positions in the list are ignored.
TokenSequence replace_with_pad(const TokenSequence& seq, std::span<const std::size_t> positions);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kUnk = 2;

  Vocabulary();

  TokenId add(const std::string& token);
  /// Id for token, kUnk when absent.
  TokenId lookup(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases ASCII, splits on whitespace, and emits every ASCII punctuation
/// character as its own token. Bytes >= 0x80 are treated as word characters,
/// so any byte string (including arbitrary UTF-8) tokenizes without error.
std::vector<std::string> tokenize(const std::string& text);

/// CLS + token ids (OOV -> UNK) truncated from the right and PAD-filled to
/// max_len. max_len counts the CLS position.
TokenSequence encode(const std::string& text, const Vocabulary& vocab, std::size_t max_len,
                     std::optional<ClassId> label = std::nullopt);

/// Ordinary tokens of seq as strings, in order.
std::vector<std::string> detokenize(const TokenSequence& seq, const Vocabulary& vocab);

struct Corpus {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> test;
  Vocabulary vocab;
  std::size_t classes = 2;
  std::size_t max_len = 32;

  /// Content hash over vocabulary, splits and labels.
  std::uint64_t fingerprint() const;
};

struct CsvSchema {
  std::string text_column = "text";
  std::string label_column = "label";
  /// Optional column holding "train"/"test". When absent, the last
  /// floor(test_fraction * rows) rows form the test split.
  std::string split_column = "split";
  double test_fraction = 0.2;
  std::size_t classes = 2;
  std::size_t max_len = 32;
};

/// Reads a CSV with a header row. Vocabulary is built from the train split
/// only. Throws InputError for unreadable files, missing columns, or labels
/// outside [0, classes).
Corpus load_csv(const std::string& path, const CsvSchema& schema = {});

/// Deterministic synthetic binary sentiment corpus. Every sentence mixes
/// positive cue words, negative cue words and neutral filler with a strict
/// majority polarity; the label (1 = positive, 0 = negative) is that
/// majority. Labels alternate before shuffling so the classes are balanced
/// to within one sample. Texts are unique across both splits.
Corpus synth_sentiment(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                       std::size_t max_len = 32);

/// Cue vocabularies used by the generator (exposed for tests).
std::span<const char* const> positive_cues();
std::span<const char* const> negative_cues();

/// Uniform sample of n test-set indices without replacement. n larger than
/// the test set is clamped and `clamped` is set.
std::vector<std::size_t> split_sample(const Corpus& corpus, std::size_t n, std::uint64_t seed,
                                      bool* clamped = nullptr);

/// One JSON object per line: text, label, split, ids, tokens.
void export_jsonl(const Corpus& corpus, const std::string& path);

}  // namespace ccat
