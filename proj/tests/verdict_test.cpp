#include "guardgate/verdict.hpp"

#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace gg {
namespace {

Verdict example_verdict() {
  Verdict v;
  v.flag = Flag::kInappropriate;
  v.scores[Attribute::kDerogatory] = Score::round(0.2);
  v.scores[Attribute::kToxic] = Score::round(0.2);
  v.scores[Attribute::kViolent] = Score::round(0.1);
  v.scores[Attribute::kInsult] = Score::round(0.1);
  v.scores[Attribute::kDeathHarmTragedy] = Score::round(0.1);
  v.scores[Attribute::kPublicSafety] = Score::round(0.1);
  v.scores[Attribute::kReligionBelief] = Score::round(1.0);
  v.scores[Attribute::kWarConflict] = Score::round(0.1);
  v.scores[Attribute::kPolitics] = Score::round(0.2);
  return v;
}

TEST(Score, RoundsHalfUpOnTenthGrid) {
  EXPECT_EQ(Score::round(0.15).tenths(), 2);
  EXPECT_EQ(Score::round(0.25).tenths(), 3);
  EXPECT_EQ(Score::round(0.04).tenths(), 0);
  EXPECT_EQ(Score::round(1.0).tenths(), 10);
  EXPECT_THROW(Score::round(1.01), InvalidInput);
  EXPECT_THROW(Score::round(-0.1), InvalidInput);
  EXPECT_THROW(Score::exact(0.33), InvalidInput);
  EXPECT_EQ(Score::exact(0.3).tenths(), 3);
}

TEST(Attributes, LettersAreContiguousAndNamesResolve) {
  std::set<char> letters;
  for (std::size_t i = 0; i < kAttributes.size(); ++i) {
    EXPECT_EQ(kAttributes[i].letter, static_cast<char>('A' + i));
    EXPECT_EQ(index_of(kAttributes[i].attribute), i);
    EXPECT_EQ(attribute_from_name(kAttributes[i].id), kAttributes[i].attribute);
    EXPECT_EQ(attribute_from_name(kAttributes[i].display), kAttributes[i].attribute);
    letters.insert(kAttributes[i].letter);
  }
  EXPECT_EQ(letters.size(), 16u);
  EXPECT_EQ(attribute_from_name("FIREARMS & WEAPONS"), Attribute::kFirearmsWeapons);
  EXPECT_FALSE(attribute_from_name("weapons"));
}

TEST(Codec, EncodesReferenceExample) {
  EXPECT_EQ(encode_verdict(example_verdict()).text, "true A2B2C1E1G1I1K10M1N2");
  EXPECT_EQ(decode_verdict("true A2B2C1E1G1I1K10M1N2"), example_verdict());
}

TEST(Codec, AllZeroIsBareFlag) {
  EXPECT_EQ(encode_verdict(Verdict{}).text, "false");
  Verdict v;
  v.flag = Flag::kInappropriate;
  EXPECT_EQ(encode_verdict(v).text, "true");
  EXPECT_EQ(decode_verdict("false"), Verdict{});
}

TEST(Codec, DecodeIsLenient) {
  const Verdict want = decode_verdict("true A2C1");
  EXPECT_EQ(decode_verdict("  true  C1 A2 \n"), want);
  EXPECT_EQ(decode_verdict("true C1A2B0"), want);
}

TEST(Codec, DecodeErrorsCarryOffsets) {
  struct Case {
    const char* text;
    std::size_t offset;
  };
  for (const Case c : {Case{"maybe A1", 0}, Case{"true A1Z3", 7}, Case{"true A1A2", 7}, Case{"true A", 6},
                       Case{"true A11", 6}, Case{"true A1,B2", 7}, Case{"", 0}}) {
    try {
      decode_verdict(c.text);
      ADD_FAILURE() << "no error for '" << c.text << "'";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.offset(), c.offset) << c.text << ": " << e.reason();
    }
  }
}

TEST(Codec, RoundTripProperty) {
  std::mt19937_64 gen(11);
  for (int i = 0; i < 5000; ++i) {
    const Verdict v = testing::random_verdict(gen);
    const std::string coded = encode_verdict(v).text;
    ASSERT_EQ(decode_verdict(coded), v) << coded;
    ASSERT_EQ(encode_verdict(decode_verdict(coded)).text, coded);
    // Canonical form: letters strictly ascending, no zero values.
    char prev = 0;
    for (char c : coded)
      if (c >= 'A' && c <= 'P') {
        ASSERT_GT(c, prev);
        prev = c;
      }
  }
}

TEST(Uncoded, RendersEveryKeyInOrder) {
  const std::string s = render_uncoded(example_verdict());
  EXPECT_EQ(s,
            "{\"Appropriateness\": \"inappropriate\", \"Derogatory\": 0.2, \"Toxic\": 0.2, \"Violent\": 0.1, "
            "\"Sexual\": 0, \"Insult\": 0.1, \"Obscene\": 0, \"Death, Harm & Tragedy\": 0.1, \"Firearms & Weapons\": 0, "
            "\"Public Safety\": 0.1, \"Health\": 0, \"Religion & Belief\": 1, \"Drugs\": 0, \"War & Conflict\": 0.1, "
            "\"Politics\": 0.2, \"Finance\": 0, \"Legal\": 0}");
}

TEST(Uncoded, ParsesWithSurroundingProse) {
  Verdict v = example_verdict();
  v.explanation = "Mentions {braces} and \"quotes\".";
  const std::string text = "Sure, here it is:\n" + render_uncoded(v) + "\nHope that helps.";
  EXPECT_EQ(parse_uncoded(text), v);
}

TEST(Uncoded, MissingKeysDefaultToZeroAndValuesRound) {
  const Verdict v = parse_uncoded(R"({"Appropriateness": "Appropriate", "Toxic": 0.26})");
  EXPECT_FALSE(v.flagged());
  EXPECT_EQ(v.scores[Attribute::kToxic].tenths(), 3);
  EXPECT_EQ(v.scores[Attribute::kLegal].tenths(), 0);
}

TEST(Uncoded, RejectsMalformed) {
  EXPECT_THROW(parse_uncoded("no object here"), ParseError);
  EXPECT_THROW(parse_uncoded(R"({"Appropriateness": "inappropriate", "Toxic": 0.2)"), ParseError);
  EXPECT_THROW(parse_uncoded(R"({"Appropriatness": "inappropriate"})"), ParseError);
  EXPECT_THROW(parse_uncoded(R"({"Appropriateness": "unsure"})"), ParseError);
  EXPECT_THROW(parse_uncoded(R"({"Appropriateness": "appropriate", "Toxic": "high"})"), ParseError);
  EXPECT_THROW(parse_uncoded(R"({"Appropriateness": "appropriate", "Toxic": 1.5})"), ParseError);
}

TEST(Uncoded, RoundTripProperty) {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 2000; ++i) {
    const Verdict v = testing::random_verdict(gen);
    ASSERT_EQ(parse_uncoded(render_uncoded(v)), v);
  }
}

TEST(WireScores, UseSnakeCaseIds) {
  const auto j = scores_to_json(example_verdict().scores);
  ASSERT_EQ(j.size(), 16u);
  EXPECT_DOUBLE_EQ(j["religion_belief"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["death_harm_tragedy"].get<double>(), 0.1);
  EXPECT_EQ(j.begin().key(), "derogatory");
}

}  // namespace
}  // namespace gg
