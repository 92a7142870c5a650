#pragma once

#include <cctype>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "guardgate/error.hpp"
#include "guardgate/verdict.hpp"

namespace gg {

// Byte span of one token inside the source text.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Swappable token counter. The default counts maximal non-whitespace runs; a
// model-specific BPE counter can be plugged in by implementing tokenize().
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenSpan> tokenize(std::string_view text) const = 0;
};

class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::vector<TokenSpan> tokenize(std::string_view text) const override {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
      while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      if (i == n) break;
      std::size_t start = i;
      while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      out.push_back({start, i});
    }
    return out;
  }
};

struct TokenizerPolicy {
  std::shared_ptr<const Tokenizer> tokenizer = std::make_shared<WhitespaceTokenizer>();
  std::size_t max_tokens = 3000;
};

inline std::size_t count_tokens(std::string_view text, const TokenizerPolicy& policy = {}) {
  return policy.tokenizer->tokenize(text).size();
}

struct Chunk {
  std::size_t index = 0;
  std::size_t offset = 0;  // byte offset of text within the input
  std::string text;
  std::size_t token_count = 0;
};

// Greedy packing of whole sentences into chunks of at most max_tokens. A
// sentence ends at a token ending in '.', '!' or '?', or before a line break.
// Sentences longer than the budget are hard-split at token boundaries.
//
// Chunks tile the input: chunk i spans from its first token up to the first
// token of chunk i+1 (leading whitespace belongs to chunk 0), so joining all
// chunk texts reproduces the input byte for byte.
inline std::vector<Chunk> split_chunks(std::string_view text, const TokenizerPolicy& policy = {}) {
  if (policy.max_tokens < 1) throw InvalidInput("max_tokens must be >= 1");
  const auto tokens = policy.tokenizer->tokenize(text);
  if (tokens.empty()) return {};

  auto ends_sentence = [&](std::size_t k) {
    char last = text[tokens[k].end - 1];
    if (last == '.' || last == '!' || last == '?') return true;
    std::size_t gap_end = k + 1 < tokens.size() ? tokens[k + 1].begin : text.size();
    return text.substr(tokens[k].end, gap_end - tokens[k].end).find('\n') != std::string_view::npos;
  };

  // Token index at which each chunk starts.
  std::vector<std::size_t> starts;
  std::size_t chunk_start = 0;
  std::size_t in_chunk = 0;
  std::size_t sentence_start = 0;
  starts.push_back(0);
  const std::size_t max = policy.max_tokens;

  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (!ends_sentence(k) && k + 1 != tokens.size()) continue;
    std::size_t len = k + 1 - sentence_start;
    if (in_chunk + len <= max) {
      in_chunk += len;
    } else {
      if (in_chunk > 0) {
        chunk_start = sentence_start;
        starts.push_back(chunk_start);
        in_chunk = 0;
      }
      while (len > max) {
        chunk_start += max;
        starts.push_back(chunk_start);
        len -= max;
      }
      in_chunk = len;
    }
    sentence_start = k + 1;
  }

  std::vector<Chunk> chunks;
  chunks.reserve(starts.size());
  for (std::size_t c = 0; c < starts.size(); ++c) {
    std::size_t first_tok = starts[c];
    std::size_t end_tok = c + 1 < starts.size() ? starts[c + 1] : tokens.size();
    std::size_t byte_begin = c == 0 ? 0 : tokens[first_tok].begin;
    std::size_t byte_end = c + 1 < starts.size() ? tokens[end_tok].begin : text.size();
    chunks.push_back(Chunk{c, byte_begin, std::string(text.substr(byte_begin, byte_end - byte_begin)),
                           end_tok - first_tok});
  }
  return chunks;
}

// Combines per-chunk verdicts: flagged if any chunk is flagged, each attribute
// takes its maximum, explanations are joined and tagged with the chunk index.
inline Verdict aggregate(const std::vector<Verdict>& verdicts) {
  if (verdicts.empty()) throw EmptyInput("aggregate: no chunk verdicts");
  if (verdicts.size() == 1) return verdicts.front();
  Verdict out;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const Verdict& v = verdicts[i];
    if (v.flagged()) out.flag = Flag::kInappropriate;
    for (const auto& a : kAttributes) {
      out.scores[a.attribute] = std::max(out.scores[a.attribute], v.scores[a.attribute]);
    }
    if (!v.explanation.empty()) {
      if (!out.explanation.empty()) out.explanation += '\n';
      out.explanation += "[chunk " + std::to_string(i) + "] " + v.explanation;
    }
  }
  return out;
}

}  // namespace gg
