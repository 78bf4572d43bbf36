#include "contrastcat/corpus/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "contrastcat/util/error.hpp"
#include "contrastcat/util/hash.hpp"
#include "json.hpp"

namespace ccat {

std::size_t TokenSequence::active_length() const noexcept {
  std::size_t n = kinds.size();
  while (n > 1 && kinds[n - 1] == TokenKind::kPad) --n;
  return n;
}

std::size_t TokenSequence::ordinary_count() const noexcept {
  return static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), TokenKind::kOrdinary));
}

std::vector<std::size_t> TokenSequence::ordinary_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == TokenKind::kOrdinary) out.push_back(i);
  return out;
}

void TokenSequence::validate() const {
  if (ids.size() != kinds.size()) throw InvariantError("token ids and kinds differ in length");
  if (ids.empty() || kinds[0] != TokenKind::kCls) {
    throw InvariantError("token sequence must start with CLS");
  }
  bool seen_pad = false;
  for (std::size_t i = 1; i < kinds.size(); ++i) {
    if (kinds[i] == TokenKind::kCls) throw InvariantError("CLS token after position 0");
    if (kinds[i] == TokenKind::kPad) seen_pad = true;
    if (kinds[i] == TokenKind::kOrdinary && seen_pad) {
      throw InvariantError("ordinary token at position " + std::to_string(i) + " after PAD");
    }
  }
}

TokenSequence replace_with_pad(const TokenSequence& seq, std::span<const std::size_t> positions) {
  TokenSequence out = seq;
  for (std::size_t p : positions) {
    if (p < out.kinds.size() && out.kinds[p] == TokenKind::kOrdinary) {
      out.ids[p] = Vocabulary::kPad;
      out.kinds[p] = TokenKind::kPad;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  add("[PAD]");
  add("[CLS]");
  add("[UNK]");
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

TokenId Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw InputError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else if (u < 0x80 && std::iscntrl(u)) {
      flush();
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab, std::size_t max_len,
                     std::optional<ClassId> label) {
  if (max_len < 1) throw InputError("max_len must be at least 1");
  TokenSequence seq;
  seq.text = text;
  seq.label = label;
  seq.ids.assign(max_len, Vocabulary::kPad);
  seq.kinds.assign(max_len, TokenKind::kPad);
  seq.ids[0] = Vocabulary::kCls;
  seq.kinds[0] = TokenKind::kCls;
  const auto tokens = tokenize(text);
  const std::size_t n = std::min(tokens.size(), max_len - 1);
  for (std::size_t i = 0; i < n; ++i) {
    seq.ids[i + 1] = vocab.lookup(tokens[i]);
    seq.kinds[i + 1] = TokenKind::kOrdinary;
  }
  return seq;
}

std::vector<std::string> detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    if (seq.kinds[i] == TokenKind::kOrdinary) out.push_back(vocab.token(seq.ids[i]));
  return out;
}

std::uint64_t Corpus::fingerprint() const {
  Fnv1a h;
  for (const auto& t : vocab.tokens()) {
    h.update(t);
    h.update(std::string(1, '\0'));
  }
  auto add_split = [&](const std::vector<TokenSequence>& split, char tag) {
    h.update(std::string(1, tag));
    for (const auto& s : split) {
      h.update(std::span(reinterpret_cast<const std::uint8_t*>(s.ids.data()),
                         s.ids.size() * sizeof(TokenId)));
      const std::uint64_t label = s.label.value_or(~0ULL);
      h.update(std::span(reinterpret_cast<const std::uint8_t*>(&label), sizeof(label)));
    }
  };
  add_split(train, 'r');
  add_split(test, 'e');
  return h.digest();
}

namespace {

// RFC 4180 style: quoted fields may contain commas, doubled quotes and
// newlines.
std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  char ch;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (in.get(ch)) {
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\n') {
      end_row();
    } else if (ch == '\r') {
      // swallowed; the following \n ends the row
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
  if (quoted) throw InputError("csv: unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                         bool required) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  if (required) throw InputError("csv: missing column '" + name + "'");
  return header.size();
}

}  // namespace

Corpus load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read csv file '" + path + "'");
  const auto rows = parse_csv(in);
  if (rows.empty()) throw InputError("csv file '" + path + "' has no header");
  const auto& header = rows[0];
  const std::size_t text_col = column_index(header, schema.text_column, true);
  const std::size_t label_col = column_index(header, schema.label_column, true);
  const std::size_t split_col = column_index(header, schema.split_column, false);
  const bool has_split = split_col < header.size();

  struct Row {
    std::string text;
    ClassId label;
    bool test;
  };
  std::vector<Row> parsed;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= std::max(text_col, label_col) || (has_split && row.size() <= split_col)) {
      throw InputError("csv: row " + std::to_string(r + 1) + " has too few fields");
    }
    long long label = 0;
    try {
      std::size_t used = 0;
      label = std::stoll(row[label_col], &used);
      if (used != row[label_col].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InputError("csv: row " + std::to_string(r + 1) + " label '" + row[label_col] +
                       "' is not an integer");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= schema.classes) {
      throw InputError("csv: row " + std::to_string(r + 1) + " label " + std::to_string(label) +
                       " outside [0, " + std::to_string(schema.classes) + ")");
    }
    parsed.push_back({row[text_col], static_cast<ClassId>(label),
                      has_split && row[split_col] == "test"});
  }
  if (!has_split) {
    const auto n_test =
        static_cast<std::size_t>(schema.test_fraction * static_cast<double>(parsed.size()));
    for (std::size_t i = parsed.size() - n_test; i < parsed.size(); ++i) parsed[i].test = true;
  }

  Corpus corpus;
  corpus.classes = schema.classes;
  corpus.max_len = schema.max_len;
  for (const auto& row : parsed)
    if (!row.test)
      for (const auto& tok : tokenize(row.text)) corpus.vocab.add(tok);
  for (const auto& row : parsed) {
    auto seq = encode(row.text, corpus.vocab, schema.max_len, row.label);
    (row.test ? corpus.test : corpus.train).push_back(std::move(seq));
  }
  return corpus;
}

namespace {

constexpr std::array<const char*, 15> kPositive = {
    "charm",    "fun",     "delightful", "witty",     "memorable", "wonderful", "touching", "masterful",
    "endearing", "funny",  "great",      "brilliant", "enjoyable", "charming",  "stunning"};
constexpr std::array<const char*, 15> kNegative = {
    "slow",  "fails",  "disappointment", "boring", "dull",  "flawed", "unfunny", "inept",
    "tedious", "stupid", "awful",        "pitiful", "bland", "weak",   "mess"};
constexpr std::array<const char*, 30> kNeutral = {
    "it",    "is",    "the",   "a",      "movie", "film",  "story",    "very",  "this",  "plot",
    "with",  "and",   "of",    "score",  "cast",  "scene", "director", "was",   "really", "quite",
    "new",   "york",  "more",  "than",   "to",    "make",  "rather",   "some",  "at",    "times"};

template <std::size_t N>
const char* pick(const std::array<const char*, N>& words, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, N - 1);
  return words[d(rng)];
}

std::string make_sentence(bool positive, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> majority_d(1, 3);
  const int majority = majority_d(rng);
  std::uniform_int_distribution<int> minority_d(0, majority - 1);
  const int minority = minority_d(rng);
  std::uniform_int_distribution<int> filler_d(2, 6);
  const int filler = filler_d(rng);
  std::vector<std::string> words;
  for (int i = 0; i < majority; ++i)
    words.emplace_back(positive ? pick(kPositive, rng) : pick(kNegative, rng));
  for (int i = 0; i < minority; ++i)
    words.emplace_back(positive ? pick(kNegative, rng) : pick(kPositive, rng));
  for (int i = 0; i < filler; ++i) words.emplace_back(pick(kNeutral, rng));
  std::shuffle(words.begin(), words.end(), rng);
  std::string text;
  for (const auto& w : words) {
    if (!text.empty()) text.push_back(' ');
    text += w;
  }
  if (std::bernoulli_distribution(0.5)(rng)) text += " .";
  return text;
}

}  // namespace

std::span<const char* const> positive_cues() { return kPositive; }
std::span<const char* const> negative_cues() { return kNegative; }

Corpus synth_sentiment(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                       std::size_t max_len) {
  if (n_train < 1 || n_test < 1) throw InputError("synth_sentiment: sizes must be >= 1");
  std::mt19937_64 rng(seed);
  std::unordered_set<std::string> seen;
  auto generate = [&](std::size_t n) {
    std::vector<std::pair<std::string, ClassId>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool positive = (i % 2) == 1;
      for (;;) {
        std::string s = make_sentence(positive, rng);
        if (seen.insert(s).second) {
          out.emplace_back(std::move(s), positive ? 1 : 0);
          break;
        }
      }
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  };
  const auto train = generate(n_train);
  const auto test = generate(n_test);

  Corpus corpus;
  corpus.classes = 2;
  corpus.max_len = max_len;
  for (const auto& [text, _] : train)
    for (const auto& tok : tokenize(text)) corpus.vocab.add(tok);
  for (const auto& [text, label] : train) corpus.train.push_back(encode(text, corpus.vocab, max_len, label));
  for (const auto& [text, label] : test) corpus.test.push_back(encode(text, corpus.vocab, max_len, label));
  return corpus;
}

std::vector<std::size_t> split_sample(const Corpus& corpus, std::size_t n, std::uint64_t seed,
                                      bool* clamped) {
  const std::size_t total = corpus.test.size();
  if (clamped) *clamped = n > total;
  n = std::min(n, total);
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  return idx;
}

void export_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  auto dump = [&](const std::vector<TokenSequence>& split, const char* name) {
    for (const auto& s : split) {
      nlohmann::json j;
      j["split"] = name;
      j["text"] = s.text;
      j["label"] = s.label ? nlohmann::json(*s.label) : nlohmann::json(nullptr);
      const std::size_t n = s.active_length();
      j["ids"] = std::vector<TokenId>(s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(n));
      std::vector<std::string> toks;
      for (std::size_t i = 0; i < n; ++i) toks.push_back(corpus.vocab.token(s.ids[i]));
      j["tokens"] = toks;
      out << j.dump() << '\n';
    }
  };
  dump(corpus.train, "train");
  dump(corpus.test, "test");
}

}  // namespace ccat
