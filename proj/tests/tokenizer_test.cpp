#include "snoop/tokenizer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <regex>
#include <string>
#include <vector>

namespace snoop {
namespace {

// Independent splitter: pad every punctuation character with spaces, then
// split on whitespace with a regex.
std::vector<std::string> oracle_tokenize(const std::string& text) {
  std::string padded;
  for (char c : text) {
    if (std::string("()[]{},=*<>!").find(c) != std::string::npos) {
      padded += ' ';
      padded += c;
      padded += ' ';
    } else {
      padded += c;
    }
  }
  std::vector<std::string> out;
  const std::regex ws("\\S+");
  for (auto it = std::sregex_iterator(padded.begin(), padded.end(), ws); it != std::sregex_iterator(); ++it)
    out.push_back(it->str());
  return out;
}

TEST(Tokenize, StoreInstruction) {
  EXPECT_EQ(tokenize("store i32 0, i32* %loc_1"),
            (std::vector<std::string>{"store", "i32", "0", ",", "i32", "*", "%loc_1"}));
}

TEST(Tokenize, EmptyString) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, CallInstructionMatchesIndependentSplitter) {
  const std::string text = "call void @func_2(i8* %loc_3)";
  const auto tokens = tokenize(text);
  EXPECT_EQ(tokens, oracle_tokenize(text));
  EXPECT_EQ(tokens, (std::vector<std::string>{"call", "void", "@func_2", "(", "i8", "*", "%loc_3", ")"}));
  EXPECT_EQ(tokens.back(), ")");
}

TEST(Tokenize, MetadataAndVectorsSplitPunctuation) {
  EXPECT_EQ(tokenize("!dbg !12"), (std::vector<std::string>{"!", "dbg", "!", "12"}));
  EXPECT_EQ(tokenize("<4 x i32>"), (std::vector<std::string>{"<", "4", "x", "i32", ">"}));
}

std::string random_ir_line(std::mt19937& gen) {
  static const std::vector<std::string> parts = {"%loc_1", "@func_2", "i32", "i8*", "(", ")", ",", "=",
                                                 "store",  "load",    "0",   "-17", "[4 x i8]", "{", "}",
                                                 "!0",     "<2 x i64>", "label", "%lbl_3", "  ", "\t"};
  std::string s;
  const int n = static_cast<int>(gen() % 12);
  for (int i = 0; i < n; ++i) {
    s += parts[gen() % parts.size()];
    if (gen() % 3) s += ' ';
  }
  return s;
}

TEST(Tokenize, AgreesWithOracleAndRoundTripsThroughSpaces) {
  std::mt19937 gen(7);
  for (int i = 0; i < 500; ++i) {
    const auto text = random_ir_line(gen);
    const auto tokens = tokenize(text);
    ASSERT_EQ(tokens, oracle_tokenize(text)) << text;
    std::string joined;
    for (const auto& t : tokens) joined += t + " ";
    EXPECT_EQ(tokenize(joined), tokens);
  }
}

TEST(Vocabulary, FiveDistinctTokens) {
  const std::vector<std::string> corpus = {"ret i32 %loc_1 , !"};
  const auto v = build_vocab_from_texts(corpus);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.id_count(), 7u);
}

TEST(Vocabulary, MinCountDropsSingletons) {
  const std::vector<std::string> corpus = {"a a b b c"};
  const auto v = build_vocab_from_texts(corpus, 2);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(v.id_of("c"), kUnknownId);
}

TEST(Vocabulary, EmptyCorpusIsAnError) {
  const std::vector<std::string> corpus;
  try {
    build_vocab_from_texts(corpus);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::empty_input);
  }
}

TEST(Vocabulary, OrderingIsCountThenLexicographic) {
  const std::vector<std::string> corpus = {"b a c c", "a b d"};
  const auto v = build_vocab_from_texts(corpus);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"a", "b", "c", "d"}));
  EXPECT_EQ(v.id_of("a"), 2);
  EXPECT_EQ(v.id_of("d"), 5);
}

TEST(Vocabulary, MatchesBruteForceCountOnThousandFunctions) {
  std::mt19937 gen(11);
  std::vector<std::string> corpus;
  for (int i = 0; i < 1000; ++i) {
    std::string f;
    for (int l = 0; l < 6; ++l) f += random_ir_line(gen) + "\n";
    corpus.push_back(f);
  }
  std::map<std::string, std::uint64_t> counts;
  for (const auto& f : corpus)
    for (const auto& t : oracle_tokenize(f)) ++counts[t];

  for (std::uint64_t min_count : {1u, 50u}) {
    const auto v = build_vocab_from_texts(corpus, min_count);
    std::vector<std::pair<std::uint64_t, std::string>> expected;
    for (const auto& [t, c] : counts)
      if (c >= min_count) expected.emplace_back(c, t);
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    ASSERT_EQ(v.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_EQ(v.tokens()[i], expected[i].second);
      EXPECT_EQ(v.count(static_cast<TokenId>(i) + kReservedIds), expected[i].first);
    }
  }
}

TEST(Vocabulary, PermutingCorpusGivesIdenticalVocabulary) {
  std::mt19937 gen(3);
  std::vector<std::string> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(random_ir_line(gen));
  const auto v1 = build_vocab_from_texts(corpus);
  std::shuffle(corpus.begin(), corpus.end(), gen);
  const auto v2 = build_vocab_from_texts(corpus);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(v1.serialize(), v2.serialize());
}

TEST(Vocabulary, FileFormatRoundTrips) {
  const std::vector<std::string> corpus = {"store i32 0 , i32 * %loc_1"};
  const auto v = build_vocab_from_texts(corpus);
  const auto text = v.serialize();
  EXPECT_EQ(text.substr(0, text.find('\n')), "6 2");
  EXPECT_EQ(text.substr(text.find('\n') + 1, 6), "i32\t2\n");
  EXPECT_EQ(Vocabulary::parse(text), v);
  EXPECT_THROW(Vocabulary::parse("3 1\n"), error);
}

TEST(Encode, KnownTokensRoundTrip) {
  const std::vector<std::string> corpus = {"store i32 0 , i32 * %loc_1"};
  const auto v = build_vocab_from_texts(corpus);
  const auto tokens = tokenize(corpus[0]);
  const auto ids = encode(tokens, v);
  EXPECT_EQ(decode(ids, v), tokens);
  for (auto id : ids) EXPECT_GE(id, kReservedIds);
}

TEST(Encode, UnknownTokenMapsToOne) {
  const std::vector<std::string> corpus = {"a b"};
  const auto v = build_vocab_from_texts(corpus);
  EXPECT_EQ(encode({"a", "zzz", "b"}, v), (std::vector<TokenId>{v.id_of("a"), kUnknownId, v.id_of("b")}));
}

TEST(Encode, PreservesLengthOfLongMixedSequence) {
  const std::vector<std::string> corpus = {"a b c"};
  const auto v = build_vocab_from_texts(corpus);
  std::vector<std::string> seq;
  for (int i = 0; i < 2048; ++i) seq.push_back(i % 3 == 0 ? "unknown" + std::to_string(i) : "b");
  const auto ids = encode(seq, v);
  EXPECT_EQ(ids.size(), 2048u);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), kUnknownId), 683);
}

}  // namespace
}  // namespace snoop
