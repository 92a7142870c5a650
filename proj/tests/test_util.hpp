#pragma once

#include <random>
#include <string>

#include "guardgate/verdict.hpp"

namespace gg::testing {

inline Verdict random_verdict(std::mt19937_64& gen, double zero_prob = 0.5) {
  Verdict v;
  v.flag = std::bernoulli_distribution(0.5)(gen) ? Flag::kInappropriate : Flag::kAppropriate;
  std::bernoulli_distribution zero(zero_prob);
  std::uniform_int_distribution<int> tenths(1, 10);
  for (const auto& a : kAttributes) v.scores[a.attribute] = Score::from_tenths(zero(gen) ? 0 : tenths(gen));
  return v;
}

inline std::string source_path(const std::string& rel) { return std::string(GG_SOURCE_DIR) + "/" + rel; }

}  // namespace gg::testing
