#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/util/error.hpp"

namespace ccat {
namespace {

namespace fs = std::filesystem;

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = (fs::temp_directory_path() / name).string();
  std::ofstream(path) << content;
  return path;
}

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(tokenize("It is VERY slow."),
            (std::vector<std::string>{"it", "is", "very", "slow", "."}));
  EXPECT_EQ(tokenize("  don't,stop  "),
            (std::vector<std::string>{"don", "'", "t", ",", "stop"}));
  EXPECT_TRUE(tokenize("   \t\n").empty());
}

TEST(Tokenize, TotalOnArbitraryBytes) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> byte(0, 255);
  Vocabulary vocab;
  vocab.add("a");
  for (int trial = 0; trial < 200; ++trial) {
    std::string s(static_cast<std::size_t>(trial % 40), '\0');
    for (char& c : s) c = static_cast<char>(byte(rng));
    const auto seq = encode(s, vocab, 16);
    EXPECT_NO_THROW(seq.validate());
    EXPECT_EQ(seq.size(), 16u);
  }
  EXPECT_NO_THROW(encode("naïve café 😀 übung", vocab, 8).validate());
}

TEST(Encode, PrependsClsPadsAndTruncates) {
  Vocabulary vocab;
  const TokenId good = vocab.add("good");
  const TokenId movie = vocab.add("movie");
  const auto seq = encode("good movie", vocab, 5, 1);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{Vocabulary::kCls, good, movie, 0, 0}));
  EXPECT_EQ(seq.active_length(), 3u);
  EXPECT_EQ(seq.ordinary_count(), 2u);
  EXPECT_EQ(seq.ordinary_positions(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(seq.label, std::optional<ClassId>(1));

  const auto cut = encode("good movie good movie", vocab, 3);
  EXPECT_EQ(cut.ids, (std::vector<TokenId>{Vocabulary::kCls, good, movie}));
  EXPECT_EQ(encode("", vocab, 1).ids, std::vector<TokenId>{Vocabulary::kCls});
}

TEST(Encode, UnknownTokensMapToUnk) {
  Vocabulary vocab;
  vocab.add("good");
  const auto seq = encode("good plot", vocab, 4);
  EXPECT_EQ(seq.ids[2], Vocabulary::kUnk);
  EXPECT_EQ(seq.kinds[2], TokenKind::kOrdinary);
}

TEST(Encode, DetokenizePreservesOrder) {
  Vocabulary vocab;
  const std::string text = "the plot, sadly , fails !";
  for (const auto& t : tokenize(text)) vocab.add(t);
  EXPECT_EQ(detokenize(encode(text, vocab, 32), vocab), tokenize(text));
}

TEST(TokenSequence, ValidateEnforcesLayout) {
  TokenSequence s{{Vocabulary::kCls, 5, Vocabulary::kPad},
                  {TokenKind::kCls, TokenKind::kOrdinary, TokenKind::kPad}, "", std::nullopt};
  EXPECT_NO_THROW(s.validate());
  auto no_cls = s;
  no_cls.kinds[0] = TokenKind::kOrdinary;
  EXPECT_THROW(no_cls.validate(), InvariantError);
  auto after_pad = s;
  after_pad.kinds = {TokenKind::kCls, TokenKind::kPad, TokenKind::kOrdinary};
  EXPECT_THROW(after_pad.validate(), InvariantError);
}

TEST(ReplaceWithPad, KeepsLengthAndSpecials) {
  const auto seq = TokenSequence{{Vocabulary::kCls, 5, 6, 7},
                                 {TokenKind::kCls, TokenKind::kOrdinary, TokenKind::kOrdinary,
                                  TokenKind::kOrdinary},
                                 "",
                                 std::nullopt};
  const std::size_t pos[] = {0, 2};
  const auto out = replace_with_pad(seq, pos);
  EXPECT_EQ(out.ids, (std::vector<TokenId>{Vocabulary::kCls, 5, Vocabulary::kPad, 7}));
  EXPECT_EQ(out.kinds[0], TokenKind::kCls);
  EXPECT_EQ(out.kinds[2], TokenKind::kPad);
  EXPECT_EQ(out.active_length(), 4u);
}

TEST(LoadCsv, SingleRowCorpus) {
  const auto path = write_temp("ccat_one.csv", "text,label\n\"good movie\",1\n");
  CsvSchema schema;
  schema.max_len = 8;
  const Corpus c = load_csv(path, schema);
  ASSERT_EQ(c.train.size() + c.test.size(), 1u);
  ASSERT_EQ(c.train.size(), 1u);
  EXPECT_EQ(c.train[0].ids.size(), 8u);
  EXPECT_EQ(c.train[0].label, std::optional<ClassId>(1));
  EXPECT_EQ(c.train[0].text, "good movie");
}

TEST(LoadCsv, VocabularyFromTrainOnlyAndSplitColumn) {
  const auto path = write_temp("ccat_split.csv",
                               "label,text,split\n1,\"great fun\",train\n0,\"so dull\",train\n"
                               "0,\"dull, unseen\",test\n");
  const Corpus c = load_csv(path);
  ASSERT_EQ(c.train.size(), 2u);
  ASSERT_EQ(c.test.size(), 1u);
  EXPECT_FALSE(c.vocab.contains("unseen"));
  EXPECT_EQ(c.test[0].ids[3], Vocabulary::kUnk);
  EXPECT_EQ(c.test[0].ids[1], c.vocab.lookup("dull"));
}

TEST(LoadCsv, TrailingFractionBecomesTest) {
  std::string content = "text,label\n";
  for (int i = 0; i < 10; ++i) content += "row " + std::to_string(i) + "," + std::to_string(i % 2) + "\n";
  CsvSchema schema;
  schema.split_column = "none";
  schema.test_fraction = 0.3;
  const Corpus c = load_csv(write_temp("ccat_frac.csv", content), schema);
  EXPECT_EQ(c.train.size(), 7u);
  EXPECT_EQ(c.test.size(), 3u);
  EXPECT_EQ(c.test[0].text, "row 7");
}

TEST(LoadCsv, Errors) {
  EXPECT_THROW(load_csv("/nonexistent/ccat.csv"), InputError);
  EXPECT_THROW(load_csv(write_temp("ccat_nocol.csv", "body,label\nx,1\n")), InputError);
  EXPECT_THROW(load_csv(write_temp("ccat_range.csv", "text,label\nx,2\n")), InputError);
  EXPECT_THROW(load_csv(write_temp("ccat_nan.csv", "text,label\nx,one\n")), InputError);
}

TEST(SynthSentiment, DeterministicForSeed) {
  const Corpus a = synth_sentiment(5, 300, 100);
  const Corpus b = synth_sentiment(5, 300, 100);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), synth_sentiment(6, 300, 100).fingerprint());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].ids, b.train[i].ids);
}

TEST(SynthSentiment, LabelIsStrictCueMajority) {
  const std::set<std::string> pos(positive_cues().begin(), positive_cues().end());
  const std::set<std::string> neg(negative_cues().begin(), negative_cues().end());
  const Corpus c = synth_sentiment(2, 1000, 300);
  bool saw_three_to_one = false;
  for (const auto* split : {&c.train, &c.test}) {
    for (const auto& s : *split) {
      int p = 0, n = 0;
      for (const auto& t : tokenize(s.text)) {
        p += pos.count(t) ? 1 : 0;
        n += neg.count(t) ? 1 : 0;
      }
      ASSERT_NE(p, n) << s.text;
      EXPECT_EQ(*s.label, p > n ? 1u : 0u) << s.text;
      if (p == 3 && n == 1) {
        saw_three_to_one = true;
        EXPECT_EQ(*s.label, 1u);
      }
    }
  }
  EXPECT_TRUE(saw_three_to_one);
}

TEST(SynthSentiment, BalancedAndDisjoint) {
  const Corpus c = synth_sentiment(1, 2000, 500);
  for (const auto* split : {&c.train, &c.test}) {
    std::size_t positive = 0;
    for (const auto& s : *split) positive += *s.label;
    const double share = static_cast<double>(positive) / static_cast<double>(split->size());
    EXPECT_NEAR(share, 0.5, 0.01);
  }
  std::set<std::string> texts;
  for (const auto& s : c.train) texts.insert(s.text);
  for (const auto& s : c.test) EXPECT_EQ(texts.count(s.text), 0u);
  EXPECT_EQ(texts.size(), c.train.size());
  for (const auto& s : c.train)
    for (TokenId id : s.ids) EXPECT_LT(id, c.vocab.size());
}

TEST(SplitSample, UniqueDeterministicAndClamped) {
  const Corpus c = synth_sentiment(1, 50, 40);
  const auto a = split_sample(c, 25, 3);
  EXPECT_EQ(a, split_sample(c, 25, 3));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 25u);
  bool clamped = false;
  const auto all = split_sample(c, 40, 3, &clamped);
  EXPECT_FALSE(clamped);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 40u);
  EXPECT_EQ(std::vector<std::size_t>(all.begin(), all.begin() + 25), a);
  EXPECT_EQ(split_sample(c, 99, 3, &clamped).size(), 40u);
  EXPECT_TRUE(clamped);
}

TEST(ExportJsonl, OneRecordPerSequence) {
  const Corpus c = synth_sentiment(1, 5, 3);
  const auto path = (fs::temp_directory_path() / "ccat_corpus.jsonl").string();
  export_jsonl(c, path);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("tokens"));
    EXPECT_TRUE(j.contains("ids"));
    ++lines;
  }
  EXPECT_EQ(lines, 8u);
}

}  // namespace
}  // namespace ccat
