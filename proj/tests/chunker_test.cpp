#include "guardgate/chunker.hpp"

#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace gg {
namespace {

std::string uniform_sentences(int tokens, int per_sentence) {
  std::string out;
  for (int i = 0; i < tokens; ++i) {
    if (i) out += ' ';
    out += "word" + std::to_string(i % 7);
    if (i % per_sentence == per_sentence - 1) out += '.';
  }
  return out;
}

// Independent count: stream extraction splits on the same whitespace class.
std::size_t stream_count(const std::string& s) {
  std::istringstream in(s);
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

TEST(CountTokens, Basics) {
  EXPECT_EQ(count_tokens("hello world"), 2u);
  EXPECT_EQ(count_tokens(""), 0u);
  EXPECT_EQ(count_tokens(" \t\n "), 0u);
  std::string big;
  for (int i = 0; i < 4096; ++i) big += "w" + std::to_string(i) + (i % 5 ? " " : "\n");
  EXPECT_EQ(count_tokens(big), 4096u);
  EXPECT_EQ(count_tokens(big), stream_count(big));
}

TEST(SplitChunks, ShortTextIsOneChunk) {
  const auto chunks = split_chunks(uniform_sentences(100, 10));
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].index, 0u);
  EXPECT_EQ(chunks[0].token_count, 100u);
  EXPECT_TRUE(split_chunks("").empty());
}

TEST(SplitChunks, SixtyFiveHundredTokensMakeThreeChunks) {
  const std::string text = uniform_sentences(6500, 13);
  const auto chunks = split_chunks(text);
  ASSERT_EQ(chunks.size(), 3u);
  std::size_t sum = 0;
  for (const auto& c : chunks) {
    EXPECT_LE(c.token_count, 3000u);
    sum += c.token_count;
    // Sentence-aligned: every chunk but the last ends on a full stop.
    if (c.index + 1 < chunks.size()) {
      EXPECT_EQ(c.text.substr(c.text.find_last_not_of(' '), 1), ".");
    }
  }
  EXPECT_EQ(sum, 6500u);
}

TEST(SplitChunks, OverlongSentenceIsHardSplit) {
  std::string text;
  for (int i = 0; i < 5000; ++i) text += (i ? " t" : "t") + std::to_string(i);
  const auto chunks = split_chunks(text);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[0].token_count, 3000u);
  EXPECT_EQ(chunks[1].token_count, 2000u);
  EXPECT_EQ(chunks[1].text.substr(0, 5), "t3000");
}

TEST(SplitChunks, NewlineEndsSentence) {
  TokenizerPolicy p;
  p.max_tokens = 3;
  const auto chunks = split_chunks("a b\nc d\ne", p);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[0].text, "a b\n");
  EXPECT_EQ(chunks[1].text, "c d\ne");
}

TEST(SplitChunks, RejectsZeroBudget) {
  TokenizerPolicy p;
  p.max_tokens = 0;
  EXPECT_THROW(split_chunks("a", p), InvalidInput);
}

TEST(SplitChunks, CoverageAndBoundProperty) {
  std::mt19937_64 gen(3);
  const char* seps[] = {" ", "  ", "\n", "\t", " \n "};
  const char* ends[] = {"", "", "", ".", "!", "?"};
  for (int trial = 0; trial < 300; ++trial) {
    const int n = std::uniform_int_distribution<int>(0, 400)(gen);
    std::string text = std::bernoulli_distribution(0.3)(gen) ? "  " : "";
    for (int i = 0; i < n; ++i) {
      if (i) text += seps[std::uniform_int_distribution<int>(0, 4)(gen)];
      text += "x" + std::to_string(i) + ends[std::uniform_int_distribution<int>(0, 5)(gen)];
    }
    TokenizerPolicy p;
    p.max_tokens = std::uniform_int_distribution<std::size_t>(1, 60)(gen);
    const auto chunks = split_chunks(text, p);
    std::string joined;
    std::size_t sum = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      ASSERT_EQ(chunks[i].index, i);
      ASSERT_GT(chunks[i].token_count, 0u);
      ASSERT_LE(chunks[i].token_count, p.max_tokens);
      ASSERT_EQ(chunks[i].offset, joined.size());
      ASSERT_EQ(count_tokens(chunks[i].text), chunks[i].token_count);
      joined += chunks[i].text;
      sum += chunks[i].token_count;
    }
    ASSERT_EQ(sum, count_tokens(text));
    if (!chunks.empty()) {
      ASSERT_EQ(joined, text);
    }
  }
}

Verdict with(Flag f, Attribute a, int tenths) {
  Verdict v;
  v.flag = f;
  v.scores[a] = Score::from_tenths(tenths);
  return v;
}

TEST(Aggregate, Examples) {
  EXPECT_THROW(aggregate({}), EmptyInput);
  EXPECT_EQ(aggregate({Verdict{}}), Verdict{});

  const Verdict a = aggregate({with(Flag::kAppropriate, Attribute::kToxic, 1), with(Flag::kInappropriate, Attribute::kToxic, 6)});
  EXPECT_EQ(a, with(Flag::kInappropriate, Attribute::kToxic, 6));

  Verdict want = with(Flag::kAppropriate, Attribute::kHealth, 2);
  want.scores[Attribute::kDrugs] = Score::from_tenths(3);
  EXPECT_EQ(aggregate({with(Flag::kAppropriate, Attribute::kHealth, 2), with(Flag::kAppropriate, Attribute::kDrugs, 3)}), want);
}

TEST(Aggregate, ExplanationsAreTagged) {
  Verdict x, y;
  x.explanation = "first";
  y.explanation = "second";
  EXPECT_EQ(aggregate({x, Verdict{}, y}).explanation, "[chunk 0] first\n[chunk 2] second");
}

TEST(Aggregate, MonotoneAndOrderInvariant) {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Verdict> vs;
    const int n = std::uniform_int_distribution<int>(1, 6)(gen);
    for (int i = 0; i < n; ++i) vs.push_back(testing::random_verdict(gen, 0.8));
    const Verdict base = aggregate(vs);

    auto shuffled = vs;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    const Verdict s = aggregate(shuffled);
    ASSERT_EQ(s.flag, base.flag);
    ASSERT_EQ(s.scores, base.scores);

    vs.push_back(testing::random_verdict(gen, 0.8));
    const Verdict more = aggregate(vs);
    if (base.flagged()) {
      ASSERT_TRUE(more.flagged());
    }
    for (const auto& a : kAttributes) ASSERT_GE(more.scores[a.attribute], base.scores[a.attribute]);
  }
}

}  // namespace
}  // namespace gg
