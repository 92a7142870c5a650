#pragma once

// Deterministic keyword classifier standing in for the fine-tuned model.
// Text and patterns are normalised the same way (lower-cased, punctuation
// treated as whitespace) and matched on whole-word boundaries.

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "guardgate/csv.hpp"
#include "guardgate/error.hpp"
#include "guardgate/verdict.hpp"

namespace gg {

namespace detail {

inline std::vector<std::string> normalized_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace detail

struct LexiconEntry {
  std::string pattern;
  Attribute attribute;
  double weight;
};

class Lexicon {
 public:
  Lexicon() = default;

  explicit Lexicon(std::vector<LexiconEntry> entries) {
    for (auto& e : entries) add(std::move(e));
  }

  // CSV with header pattern,attribute,weight. attribute accepts the
  // snake_case id or the display name.
  static Lexicon from_csv(std::string_view data) {
    auto rows = csv::parse(data);
    if (rows.empty()) throw InvalidInput("lexicon: missing header");
    const csv::Row expected{"pattern", "attribute", "weight"};
    if (rows.front() != expected) throw InvalidInput("lexicon: header must be pattern,attribute,weight");
    Lexicon lex;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() == 1 && row[0].empty()) continue;
      if (row.size() != 3) throw InvalidInput("lexicon: row " + std::to_string(r) + " needs 3 fields");
      auto attr = attribute_from_name(row[1]);
      if (!attr) throw InvalidInput("lexicon: unknown attribute '" + row[1] + "'");
      double w = 0;
      try {
        std::size_t used = 0;
        w = std::stod(row[2], &used);
        if (used != row[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InvalidInput("lexicon: bad weight '" + row[2] + "'");
      }
      lex.add({row[0], *attr, w});
    }
    return lex;
  }

  static Lexicon load(const std::string& path) { return from_csv(csv::read_text(path)); }

  const std::vector<LexiconEntry>& entries() const noexcept { return entries_; }
  const std::vector<std::vector<std::string>>& pattern_words() const noexcept { return words_; }

 private:
  void add(LexiconEntry e) {
    if (!(e.weight > 0.0 && e.weight <= 1.0)) throw InvalidInput("lexicon: weight must be in (0,1] for '" + e.pattern + "'");
    auto words = detail::normalized_words(e.pattern);
    if (words.empty()) throw InvalidInput("lexicon: empty pattern");
    entries_.push_back(std::move(e));
    words_.push_back(std::move(words));
  }

  std::vector<LexiconEntry> entries_;
  std::vector<std::vector<std::string>> words_;
};

struct ScoredText {
  double raw_score = 0.0;  // max unrounded attribute score
  std::array<double, kAttributeCount> raw{};
  Verdict verdict;
};

// Each pattern contributes its weight once if it occurs anywhere in the text;
// per-attribute sums saturate at 1.
inline ScoredText score_text(std::string_view text, const Lexicon& lexicon, double threshold = 0.5) {
  const auto words = detail::normalized_words(text);
  std::unordered_map<std::string_view, std::vector<std::size_t>> positions;
  for (std::size_t i = 0; i < words.size(); ++i) positions[words[i]].push_back(i);

  ScoredText out;
  std::string matched;
  const auto& pats = lexicon.pattern_words();
  for (std::size_t p = 0; p < pats.size(); ++p) {
    const auto& pw = pats[p];
    auto it = positions.find(pw.front());
    if (it == positions.end()) continue;
    bool hit = std::any_of(it->second.begin(), it->second.end(), [&](std::size_t start) {
      if (start + pw.size() > words.size()) return false;
      return std::equal(pw.begin() + 1, pw.end(), words.begin() + static_cast<std::ptrdiff_t>(start) + 1);
    });
    if (!hit) continue;
    const auto& e = lexicon.entries()[p];
    double& slot = out.raw[index_of(e.attribute)];
    slot = std::min(1.0, slot + e.weight);
    if (!matched.empty()) matched += ", ";
    matched += "'" + e.pattern + "' (" + std::string(info(e.attribute).id) + ")";
  }

  for (const auto& a : kAttributes) {
    double s = out.raw[index_of(a.attribute)];
    out.raw_score = std::max(out.raw_score, s);
    out.verdict.scores[a.attribute] = Score::round(s);
  }
  out.verdict.flag = out.raw_score >= threshold ? Flag::kInappropriate : Flag::kAppropriate;
  out.verdict.explanation = matched.empty() ? "No flagged terms found." : "Matched " + matched + ".";
  return out;
}

}  // namespace gg
