#pragma once

// Verdict data model and the two wire renderings a classifier can produce:
//
//   coded:   "true A2B2C1E1G1I1K10M1N2"
//   uncoded: {"Appropriateness": "inappropriate", "Derogatory": 0.2, ...}
//
// The coded form drops zero scores and the explanation. The leading token is
// "true" when the text is flagged (inappropriate). Letters A..P follow the
// attribute order below.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "guardgate/error.hpp"

namespace gg {

enum class Attribute : std::uint8_t {
  kDerogatory,
  kToxic,
  kViolent,
  kSexual,
  kInsult,
  kObscene,
  kDeathHarmTragedy,
  kFirearmsWeapons,
  kPublicSafety,
  kHealth,
  kReligionBelief,
  kDrugs,
  kWarConflict,
  kPolitics,
  kFinance,
  kLegal,
};

inline constexpr std::size_t kAttributeCount = 16;

struct AttributeInfo {
  Attribute attribute;
  std::string_view id;       // snake_case identifier used in configs and HTTP
  std::string_view display;  // key spelling in the uncoded rendering
  char letter;
};

inline constexpr std::array<AttributeInfo, kAttributeCount> kAttributes{{
    {Attribute::kDerogatory, "derogatory", "Derogatory", 'A'},
    {Attribute::kToxic, "toxic", "Toxic", 'B'},
    {Attribute::kViolent, "violent", "Violent", 'C'},
    {Attribute::kSexual, "sexual", "Sexual", 'D'},
    {Attribute::kInsult, "insult", "Insult", 'E'},
    {Attribute::kObscene, "obscene", "Obscene", 'F'},
    {Attribute::kDeathHarmTragedy, "death_harm_tragedy", "Death, Harm & Tragedy", 'G'},
    {Attribute::kFirearmsWeapons, "firearms_weapons", "Firearms & Weapons", 'H'},
    {Attribute::kPublicSafety, "public_safety", "Public Safety", 'I'},
    {Attribute::kHealth, "health", "Health", 'J'},
    {Attribute::kReligionBelief, "religion_belief", "Religion & Belief", 'K'},
    {Attribute::kDrugs, "drugs", "Drugs", 'L'},
    {Attribute::kWarConflict, "war_conflict", "War & Conflict", 'M'},
    {Attribute::kPolitics, "politics", "Politics", 'N'},
    {Attribute::kFinance, "finance", "Finance", 'O'},
    {Attribute::kLegal, "legal", "Legal", 'P'},
}};

constexpr std::size_t index_of(Attribute a) noexcept { return static_cast<std::size_t>(a); }
constexpr const AttributeInfo& info(Attribute a) noexcept { return kAttributes[index_of(a)]; }

// Accepts either the snake_case id or the display spelling, case-insensitively.
inline std::optional<Attribute> attribute_from_name(std::string_view name) {
  auto iequals = [](std::string_view x, std::string_view y) {
    return x.size() == y.size() &&
           std::equal(x.begin(), x.end(), y.begin(), [](char p, char q) {
             return std::tolower(static_cast<unsigned char>(p)) ==
                    std::tolower(static_cast<unsigned char>(q));
           });
  };
  for (const auto& a : kAttributes) {
    if (iequals(name, a.id) || iequals(name, a.display)) return a.attribute;
  }
  return std::nullopt;
}

// A score on the tenth-grid {0.0, 0.1, ..., 1.0}, stored as tenths so that
// equality is exact.
class Score {
 public:
  constexpr Score() = default;

  static constexpr Score from_tenths(int tenths) {
    if (tenths < 0 || tenths > 10) throw InvalidInput("score tenths out of range: " + std::to_string(tenths));
    return Score(static_cast<std::uint8_t>(tenths));
  }

  // Round half-up to the nearest tenth. Values outside [0,1] are rejected.
  // The small epsilon absorbs binary error such as 0.15 * 10 == 1.4999...
  static Score round(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw InvalidInput("score outside [0,1]: " + std::to_string(value));
    return from_tenths(static_cast<int>(std::floor(value * 10.0 + 0.5 + 1e-9)));
  }

  // Strict variant: only accepts values already on the grid.
  static Score exact(double value) {
    Score s = round(value);
    if (std::abs(s.value() - value) > 1e-9) throw InvalidInput("score not on the tenth-grid: " + std::to_string(value));
    return s;
  }

  constexpr int tenths() const noexcept { return tenths_; }
  constexpr double value() const noexcept { return tenths_ / 10.0; }

  friend constexpr auto operator<=>(Score, Score) = default;

 private:
  constexpr explicit Score(std::uint8_t t) : tenths_(t) {}
  std::uint8_t tenths_ = 0;
};

class AttributeScores {
 public:
  constexpr Score operator[](Attribute a) const noexcept { return scores_[index_of(a)]; }
  constexpr Score& operator[](Attribute a) noexcept { return scores_[index_of(a)]; }

  constexpr Score max() const noexcept {
    Score m;
    for (Score s : scores_) m = std::max(m, s);
    return m;
  }

  constexpr bool all_zero() const noexcept { return max().tenths() == 0; }

  friend constexpr bool operator==(const AttributeScores&, const AttributeScores&) = default;

 private:
  std::array<Score, kAttributeCount> scores_{};
};

enum class Flag : std::uint8_t { kAppropriate, kInappropriate };

constexpr std::string_view to_string(Flag f) noexcept {
  return f == Flag::kInappropriate ? "inappropriate" : "appropriate";
}

inline std::optional<Flag> flag_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "appropriate") return Flag::kAppropriate;
  if (lower == "inappropriate") return Flag::kInappropriate;
  return std::nullopt;
}

struct Verdict {
  Flag flag = Flag::kAppropriate;
  AttributeScores scores;
  std::string explanation;

  bool flagged() const noexcept { return flag == Flag::kInappropriate; }

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct CodedVerdict {
  std::string text;
  friend bool operator==(const CodedVerdict&, const CodedVerdict&) = default;
};

inline CodedVerdict encode_verdict(const Verdict& v) {
  CodedVerdict out;
  out.text = v.flagged() ? "true" : "false";
  bool first = true;
  for (const auto& a : kAttributes) {
    int t = v.scores[a.attribute].tenths();
    if (t == 0) continue;
    if (first) {
      out.text.push_back(' ');
      first = false;
    }
    out.text.push_back(a.letter);
    out.text += std::to_string(t);
  }
  return out;
}

// Lenient inverse of encode_verdict: tolerates surrounding whitespace,
// whitespace between pairs, out-of-order letters and explicit zeros.
inline Verdict decode_verdict(std::string_view text) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::size_t pos = 0;
  const std::size_t n = text.size();
  auto skip_ws = [&] {
    while (pos < n && is_space(text[pos])) ++pos;
  };

  skip_ws();
  Verdict v;
  std::size_t word_end = pos;
  while (word_end < n && !is_space(text[word_end])) ++word_end;
  std::string_view word = text.substr(pos, word_end - pos);
  if (word == "true") {
    v.flag = Flag::kInappropriate;
  } else if (word == "false") {
    v.flag = Flag::kAppropriate;
  } else {
    throw ParseError(pos, "expected flag token 'true' or 'false'");
  }
  pos = word_end;

  std::array<bool, kAttributeCount> seen{};
  skip_ws();
  while (pos < n) {
    char letter = text[pos];
    if (letter < 'A' || letter > 'P') {
      if (std::isalpha(static_cast<unsigned char>(letter))) throw ParseError(pos, std::string("unknown attribute letter '") + letter + "'");
      throw ParseError(pos, "unexpected character");
    }
    const std::size_t letter_pos = pos++;
    const std::size_t idx = static_cast<std::size_t>(letter - 'A');
    if (seen[idx]) throw ParseError(letter_pos, std::string("duplicate attribute letter '") + letter + "'");
    seen[idx] = true;

    const std::size_t digits_begin = pos;
    int value = 0;
    while (pos < n && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      value = value * 10 + (text[pos] - '0');
      if (value > 10) throw ParseError(digits_begin, "value outside 0..10");
      ++pos;
    }
    if (pos == digits_begin) throw ParseError(pos, std::string("missing value after '") + letter + "'");
    v.scores[kAttributes[idx].attribute] = Score::from_tenths(value);
    skip_ws();
  }
  return v;
}

// Renders the uncoded JSON-style object with every attribute present, in the
// canonical order and with the exact key spellings.
inline std::string render_uncoded(const Verdict& v) {
  std::string out = "{\"Appropriateness\": \"";
  out += to_string(v.flag);
  out += '"';
  for (const auto& a : kAttributes) {
    out += ", \"";
    out += a.display;
    out += "\": ";
    int t = v.scores[a.attribute].tenths();
    if (t == 0) {
      out += "0";
    } else if (t == 10) {
      out += "1";
    } else {
      out += "0.";
      out += static_cast<char>('0' + t);
    }
  }
  if (!v.explanation.empty()) {
    out += ", \"Explanation\": ";
    out += nlohmann::json(v.explanation).dump();
  }
  out += '}';
  return out;
}

namespace detail {

// Locate the first balanced {...} block, honouring JSON string quoting.
// Returns [begin, end) or nullopt.
inline std::optional<std::pair<std::size_t, std::size_t>> find_object(std::string_view t) {
  const std::size_t begin = t.find('{');
  if (begin == std::string_view::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = begin; i < t.size(); ++i) {
    char c = t[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return std::make_pair(begin, i + 1);
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Parses the uncoded rendering, tolerating prose before and after the object.
// Missing attributes default to 0; off-grid numbers are rounded half-up.
inline Verdict parse_uncoded(std::string_view text) {
  auto span = detail::find_object(text);
  if (!span) throw ParseError(text.size(), "no balanced {...} object found");
  const auto [begin, end] = *span;

  nlohmann::json obj = nlohmann::json::parse(text.substr(begin, end - begin), nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded() || !obj.is_object()) throw ParseError(begin, "object is not valid JSON");

  Verdict v;
  auto flag_it = obj.find("Appropriateness");
  if (flag_it == obj.end()) throw ParseError(begin, "missing \"Appropriateness\"");
  if (!flag_it->is_string()) throw ParseError(begin, "\"Appropriateness\" is not a string");
  auto flag = flag_from_string(flag_it->get<std::string>());
  if (!flag) throw ParseError(begin, "unrecognized \"Appropriateness\" value");
  v.flag = *flag;

  for (const auto& a : kAttributes) {
    auto it = obj.find(std::string(a.display));
    if (it == obj.end() || it->is_null()) continue;
    if (!it->is_number()) throw ParseError(begin, "non-numeric score for \"" + std::string(a.display) + "\"");
    double x = it->get<double>();
    if (!(x >= 0.0 && x <= 1.0)) throw ParseError(begin, "score outside [0,1] for \"" + std::string(a.display) + "\"");
    v.scores[a.attribute] = Score::round(x);
  }
  if (auto it = obj.find("Explanation"); it != obj.end() && it->is_string()) {
    v.explanation = it->get<std::string>();
  }
  return v;
}

// Wire representation used by the HTTP layer: attribute id -> number.
inline nlohmann::ordered_json scores_to_json(const AttributeScores& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& a : kAttributes) j[std::string(a.id)] = s[a.attribute].value();
  return j;
}

}  // namespace gg
