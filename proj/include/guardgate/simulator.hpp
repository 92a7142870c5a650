#pragma once

// Closed-form latency model of the two generation phases plus a mock text
// generator. Nothing here touches a GPU; the profiles carry the handful of
// parameters needed to reproduce measured prefill/decode behaviour.
//
//   prefill = prefill_ms_ref * (seq / seq_ref) * max(1, batch / saturation_batch)
//   decode  = decode_len * decode_ms_per_token * (1 + decode_batch_slope * log2(batch))
//
// Below saturation_batch prefill latency is flat (memory-bound, throughput
// grows with batch); above it latency grows linearly with batch
// (compute-bound, throughput flat). Each phase is multiplied by a
// deterministic lognormal jitter factor with mean 1 and CV jitter_cv.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "guardgate/error.hpp"
#include "guardgate/lexicon.hpp"
#include "guardgate/verdict.hpp"

namespace gg {

struct DeploymentProfile {
  std::string name;
  double prefill_ms_ref = 0;
  int saturation_batch = 1;
  double decode_ms_per_token = 0;
  double decode_batch_slope = 0;
  int seq_ref = 512;
  int max_batch = 1;
  int tensor_parallel = 1;
  double jitter_cv = 0;
  std::vector<std::string> illustrative;  // fields not anchored to a measurement

  void validate() const {
    auto fail = [&](const std::string& why) { throw InvalidInput("profile '" + name + "': " + why); };
    if (name.empty()) fail("empty name");
    if (!(prefill_ms_ref > 0) || !(decode_ms_per_token > 0)) fail("latencies must be > 0");
    if (seq_ref < 1) fail("seq_ref must be >= 1");
    if (decode_batch_slope < 0) fail("decode_batch_slope must be >= 0");
    if (saturation_batch < 1 || !std::has_single_bit(static_cast<unsigned>(saturation_batch))) fail("saturation_batch must be a power of two");
    if (max_batch < 1 || !std::has_single_bit(static_cast<unsigned>(max_batch))) fail("max_batch must be a power of two");
    if (saturation_batch > max_batch) fail("saturation_batch must be <= max_batch");
    if (tensor_parallel < 1) fail("tensor_parallel must be >= 1");
    if (!(jitter_cv >= 0 && jitter_cv <= 0.2)) fail("jitter_cv must be in [0, 0.2]");
  }

  DeploymentProfile with_jitter(double cv) const {
    DeploymentProfile p = *this;
    p.jitter_cv = cv;
    p.validate();
    return p;
  }
};

inline void to_json(nlohmann::ordered_json& j, const DeploymentProfile& p) {
  j = nlohmann::ordered_json{{"name", p.name},
                             {"prefill_ms_ref", p.prefill_ms_ref},
                             {"saturation_batch", p.saturation_batch},
                             {"decode_ms_per_token", p.decode_ms_per_token},
                             {"decode_batch_slope", p.decode_batch_slope},
                             {"seq_ref", p.seq_ref},
                             {"max_batch", p.max_batch},
                             {"tensor_parallel", p.tensor_parallel},
                             {"jitter_cv", p.jitter_cv},
                             {"illustrative", p.illustrative}};
}

inline DeploymentProfile profile_from_json(const nlohmann::json& j) {
  DeploymentProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.prefill_ms_ref = j.at("prefill_ms_ref").get<double>();
    p.saturation_batch = j.at("saturation_batch").get<int>();
    p.decode_ms_per_token = j.at("decode_ms_per_token").get<double>();
    p.decode_batch_slope = j.at("decode_batch_slope").get<double>();
    p.seq_ref = j.value("seq_ref", 512);
    p.max_batch = j.at("max_batch").get<int>();
    p.tensor_parallel = j.value("tensor_parallel", 1);
    p.jitter_cv = j.value("jitter_cv", 0.0);
    p.illustrative = j.value("illustrative", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("profile json: ") + e.what());
  }
  p.validate();
  return p;
}

// Calibrated against the Mistral 7B / A100 measurements: prefill 267 ms at
// batch 8 and seq 512, decode 303 ms at batch 8 and 330 ms at batch 16 for 20
// tokens, out-of-memory above batch 16. Solving the decode formula for both
// decode anchors gives 11.1 ms/token and slope 27/222.
inline const std::vector<DeploymentProfile>& builtin_profiles() {
  static const std::vector<DeploymentProfile> profiles = [] {
    const std::vector<std::string> all_tuned{"prefill_ms_ref", "decode_ms_per_token", "decode_batch_slope", "max_batch", "jitter_cv"};
    std::vector<DeploymentProfile> v{
        {"mistral7b-a100", 267.0, 8, 11.1, 27.0 / 222.0, 512, 16, 1, 0.05, {"jitter_cv"}},
        {"llama2-13b-a100", 420.0, 4, 19.0, 0.12, 512, 16, 1, 0.05, all_tuned},
        {"pythia-12b-a100", 390.0, 4, 18.0, 0.12, 512, 16, 1, 0.05, all_tuned},
        {"mistral7b-l4", 610.0, 4, 26.0, 0.30, 512, 8, 1, 0.05, all_tuned},
        {"llama2-13b-l4", 980.0, 4, 40.0, 0.35, 512, 8, 2, 0.05, all_tuned},
        {"pythia-12b-l4", 900.0, 4, 37.0, 0.35, 512, 8, 2, 0.05, all_tuned},
    };
    for (const auto& p : v) p.validate();
    return v;
  }();
  return profiles;
}

// Built-in profiles, optionally overridden or extended by *.json files.
class ProfileRegistry {
 public:
  ProfileRegistry() {
    for (const auto& p : builtin_profiles()) profiles_[p.name] = p;
  }

  void add(DeploymentProfile p) {
    p.validate();
    profiles_[p.name] = std::move(p);
  }

  void load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("profile directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      std::ifstream in(entry.path());
      if (!in) throw IoError("cannot open " + entry.path().string());
      nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw InvalidInput("invalid JSON in " + entry.path().string());
      add(profile_from_json(j));
    }
  }

  const DeploymentProfile& get(std::string_view name) const {
    auto it = profiles_.find(std::string(name));
    if (it == profiles_.end()) throw UnknownProfile("unknown profile: " + std::string(name));
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : profiles_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, DeploymentProfile> profiles_;
};

inline const DeploymentProfile& find_profile(std::string_view name) {
  static const ProfileRegistry registry;
  return registry.get(name);
}

// splitmix64 finaliser folded over the parts; stable across platforms.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t x : parts) {
    h ^= x + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h += 0x9E3779B97F4A7C15ull;
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
    h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
    h ^= h >> 31;
  }
  return h;
}

// Multiplicative lognormal factor with E[x] = 1 and CV = cv. Exactly 1 when
// cv == 0.
inline double jitter_factor(double cv, std::uint64_t seed) {
  if (cv == 0.0) return 1.0;
  const double sigma2 = std::log1p(cv * cv);
  std::mt19937_64 gen(seed);
  std::lognormal_distribution<double> dist(-0.5 * sigma2, std::sqrt(sigma2));
  return dist(gen);
}

namespace detail {
inline void check_batch(const DeploymentProfile& p, int batch) {
  if (batch < 1) throw InvalidInput("batch must be >= 1");
  if (batch > p.max_batch) {
    throw OutOfMemory("batch " + std::to_string(batch) + " exceeds max_batch " + std::to_string(p.max_batch) + " of " + p.name);
  }
}
inline constexpr std::uint64_t kPrefillTag = 0x50524546;  // "PREF"
inline constexpr std::uint64_t kDecodeTag = 0x4445434F;   // "DECO"
}  // namespace detail

inline double prefill_latency(const DeploymentProfile& p, int batch, double seq, std::uint64_t seed) {
  detail::check_batch(p, batch);
  if (!(seq >= 1)) throw InvalidInput("seq must be >= 1");
  const double base = p.prefill_ms_ref * (seq / p.seq_ref) *
                      std::max(1.0, static_cast<double>(batch) / p.saturation_batch);
  const auto seq_key = static_cast<std::uint64_t>(std::llround(seq * 1000.0));
  return base * jitter_factor(p.jitter_cv, mix_seed({seed, detail::kPrefillTag, static_cast<std::uint64_t>(batch), seq_key}));
}

inline double decode_latency(const DeploymentProfile& p, int batch, int decode_len, std::uint64_t seed) {
  detail::check_batch(p, batch);
  if (decode_len < 1) throw InvalidInput("decode_len must be >= 1");
  const double base = decode_len * p.decode_ms_per_token * (1.0 + p.decode_batch_slope * std::log2(static_cast<double>(batch)));
  return base * jitter_factor(p.jitter_cv, mix_seed({seed, detail::kDecodeTag, static_cast<std::uint64_t>(batch),
                                                     static_cast<std::uint64_t>(decode_len)}));
}

enum class Regime { kMemoryBound, kComputeBound };

constexpr std::string_view to_string(Regime r) noexcept {
  return r == Regime::kMemoryBound ? "memory-bound" : "compute-bound";
}

struct SimResult {
  double prefill_ms = 0;
  double decode_ms = 0;
  double total_ms = 0;
  double prefill_throughput_tok_s = 0;
  double decode_throughput_tok_s = 0;
  Regime regime_hint = Regime::kMemoryBound;
};

// One static batch: every sequence has seq input tokens and produces
// decode_len output tokens.
inline SimResult simulate_batch(const DeploymentProfile& p, int batch, double seq, int decode_len, std::uint64_t seed) {
  SimResult r;
  r.prefill_ms = prefill_latency(p, batch, seq, seed);
  r.decode_ms = decode_latency(p, batch, decode_len, seed);
  r.total_ms = r.prefill_ms + r.decode_ms;
  r.prefill_throughput_tok_s = batch * seq * 1000.0 / r.prefill_ms;
  r.decode_throughput_tok_s = static_cast<double>(batch) * decode_len * 1000.0 / r.decode_ms;
  r.regime_hint = batch >= p.saturation_batch ? Regime::kComputeBound : Regime::kMemoryBound;
  return r;
}

enum class GenerationMode { kShort, kLong };

constexpr std::string_view to_string(GenerationMode m) noexcept {
  return m == GenerationMode::kShort ? "short" : "long";
}

namespace detail {

// Mangles a coded string so that decode_verdict is guaranteed to reject it:
// either truncate inside the flag / right after a letter, or garble a letter
// (or the flag) into something outside the grammar.
inline std::string mangle_coded(const std::string& coded, std::mt19937_64& gen) {
  const std::size_t flag_len = coded.find(' ') == std::string::npos ? coded.size() : coded.find(' ');
  std::vector<std::size_t> letters;
  for (std::size_t i = flag_len; i < coded.size(); ++i) {
    if (coded[i] >= 'A' && coded[i] <= 'P') letters.push_back(i);
  }
  const bool truncate = std::uniform_int_distribution<int>(0, 1)(gen) == 0;
  if (truncate) {
    if (letters.empty() || std::uniform_int_distribution<int>(0, 1)(gen) == 0) {
      std::size_t keep = std::uniform_int_distribution<std::size_t>(1, flag_len - 1)(gen);
      return coded.substr(0, keep);
    }
    std::size_t at = letters[std::uniform_int_distribution<std::size_t>(0, letters.size() - 1)(gen)];
    return coded.substr(0, at + 1);  // dangling letter, value lost
  }
  std::string out = coded;
  if (letters.empty()) {
    std::swap(out[0], out[1]);  // "rtue", "afsle"
    return out;
  }
  std::size_t at = letters[std::uniform_int_distribution<std::size_t>(0, letters.size() - 1)(gen)];
  out[at] = static_cast<char>('Q' + std::uniform_int_distribution<int>(0, 9)(gen));
  return out;
}

inline std::string mangle_uncoded(const std::string& text, std::mt19937_64& gen) {
  const bool truncate = std::uniform_int_distribution<int>(0, 1)(gen) == 0;
  if (truncate) {
    // Any prefix that stops before the closing brace leaves the object open.
    std::size_t close = text.rfind('}');
    std::size_t keep = std::uniform_int_distribution<std::size_t>(0, close - 1)(gen);
    return text.substr(0, keep);
  }
  std::string out = text;
  const std::string_view key = "\"Appropriateness\"";
  if (auto pos = out.find(key); pos != std::string::npos) out.replace(pos, key.size(), "\"Appropriatness\"");
  return out;
}

}  // namespace detail

// Raw model output for a scored text. Short mode emits the coded form, long
// mode the uncoded rendering with explanation. With probability
// corruption_rate the output is mangled so that the matching parser rejects it.
inline std::string generate_output(const ScoredText& scored, GenerationMode mode, double corruption_rate, std::uint64_t seed) {
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) throw InvalidInput("corruption_rate must be in [0,1]");
  std::string out = mode == GenerationMode::kShort ? encode_verdict(scored.verdict).text : render_uncoded(scored.verdict);
  if (corruption_rate == 0.0) return out;
  std::mt19937_64 gen(seed);
  if (std::uniform_real_distribution<double>(0.0, 1.0)(gen) >= corruption_rate) return out;
  return mode == GenerationMode::kShort ? detail::mangle_coded(out, gen) : detail::mangle_uncoded(out, gen);
}

}  // namespace gg
