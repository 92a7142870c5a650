#pragma once

// Static-batch benchmark over batch x sequence x decode-length sweeps.
// Each cell runs warmup_runs discarded iterations followed by runs measured
// iterations and reports nearest-rank p50/p90/p95 for both phases.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <system_error>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "guardgate/csv.hpp"
#include "guardgate/error.hpp"
#include "guardgate/simulator.hpp"

namespace gg {

// Nearest-rank percentile: element ceil(q * n) - 1 of the sorted samples.
inline double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw EmptyInput("percentile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("percentile fraction must be in (0,1]");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  // Guard against q * n landing a hair above an integer (0.9 * 10).
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

struct Percentiles {
  double p50 = 0;
  double p90 = 0;
  double p95 = 0;

  static Percentiles of(const std::vector<double>& xs) {
    return {percentile(xs, 0.50), percentile(xs, 0.90), percentile(xs, 0.95)};
  }
  friend bool operator==(const Percentiles&, const Percentiles&) = default;
};

struct PhaseStats {
  Percentiles latency_ms;
  Percentiles throughput_tok_s;
  friend bool operator==(const PhaseStats&, const PhaseStats&) = default;
};

struct BenchCell {
  int batch = 0;
  int seq = 0;
  int decode = 0;
  bool oom = false;
  std::optional<PhaseStats> prefill;
  std::optional<PhaseStats> decode_phase;
  std::optional<double> total_ms_p50;
  std::optional<double> derived_qps_p50;
  friend bool operator==(const BenchCell&, const BenchCell&) = default;
};

struct BenchConfig {
  std::string profile = "mistral7b-a100";
  std::vector<int> batch_sizes{1, 2, 4, 8, 16, 32};
  std::vector<int> seq_lens{512, 1024, 2048, 3072};
  std::vector<int> decode_lens{20, 64};
  int runs = 10;
  int warmup_runs = 1;
  std::uint64_t seed = 0;
  std::optional<double> jitter_cv;  // overrides the profile's value when set
  unsigned threads = 1;

  void validate() const {
    if (runs < 1) throw InvalidInput("runs must be >= 1");
    if (warmup_runs < 0) throw InvalidInput("warmup_runs must be >= 0");
    auto check = [](const std::vector<int>& v, const char* what) {
      if (v.empty()) throw InvalidInput(std::string(what) + " must not be empty");
      if (!std::is_sorted(v.begin(), v.end()) || std::adjacent_find(v.begin(), v.end()) != v.end())
        throw InvalidInput(std::string(what) + " must be strictly ascending");
      if (v.front() < 1) throw InvalidInput(std::string(what) + " must be >= 1");
    };
    check(batch_sizes, "batch_sizes");
    check(seq_lens, "seq_lens");
    check(decode_lens, "decode_lens");
  }
};

struct BenchReport {
  std::string profile;
  std::uint64_t seed = 0;
  int runs = 0;
  int warmup_runs = 0;
  double jitter_cv = 0;
  std::vector<BenchCell> cells;

  const BenchCell* find(int batch, int seq, int decode) const {
    for (const auto& c : cells)
      if (c.batch == batch && c.seq == seq && c.decode == decode) return &c;
    return nullptr;
  }

  friend bool operator==(const BenchReport&, const BenchReport&) = default;
};

namespace detail {

inline constexpr std::uint64_t kWarmupTag = 0x5741524Dull;
inline constexpr std::uint64_t kMeasureTag = 0x4D454153ull;

inline BenchCell run_cell(const DeploymentProfile& p, const BenchConfig& cfg, int batch, int seq, int decode) {
  BenchCell cell{batch, seq, decode};
  if (batch > p.max_batch) {
    cell.oom = true;
    return cell;
  }
  auto seed_for = [&](std::uint64_t tag, int run) {
    return mix_seed({cfg.seed, tag, static_cast<std::uint64_t>(batch), static_cast<std::uint64_t>(seq),
                     static_cast<std::uint64_t>(decode), static_cast<std::uint64_t>(run)});
  };
  for (int w = 0; w < cfg.warmup_runs; ++w) (void)simulate_batch(p, batch, seq, decode, seed_for(kWarmupTag, w));

  std::vector<double> pl, pt, dl, dt, tot;
  for (int r = 0; r < cfg.runs; ++r) {
    const SimResult s = simulate_batch(p, batch, seq, decode, seed_for(kMeasureTag, r));
    pl.push_back(s.prefill_ms);
    pt.push_back(s.prefill_throughput_tok_s);
    dl.push_back(s.decode_ms);
    dt.push_back(s.decode_throughput_tok_s);
    tot.push_back(s.total_ms);
  }
  cell.prefill = PhaseStats{Percentiles::of(pl), Percentiles::of(pt)};
  cell.decode_phase = PhaseStats{Percentiles::of(dl), Percentiles::of(dt)};
  cell.total_ms_p50 = percentile(tot, 0.5);
  cell.derived_qps_p50 = batch * 1000.0 / *cell.total_ms_p50;
  return cell;
}

}  // namespace detail

// Cells are laid out seq-major, then decode, then batch. Seeds derive from
// (seed, batch, seq, decode, run), so adding cells never perturbs others and
// the thread count has no effect on the result.
inline BenchReport run_bench(const BenchConfig& cfg, const ProfileRegistry& registry = ProfileRegistry{}) {
  cfg.validate();
  DeploymentProfile p = registry.get(cfg.profile);
  if (cfg.jitter_cv) p = p.with_jitter(*cfg.jitter_cv);

  std::vector<std::tuple<int, int, int>> layout;
  for (int seq : cfg.seq_lens)
    for (int dec : cfg.decode_lens)
      for (int b : cfg.batch_sizes) layout.emplace_back(b, seq, dec);

  BenchReport report{cfg.profile, cfg.seed, cfg.runs, cfg.warmup_runs, p.jitter_cv, {}};
  report.cells.resize(layout.size());
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(layout.size())));
  auto work = [&](unsigned tid) {
    for (std::size_t i = tid; i < layout.size(); i += threads) {
      auto [b, s, d] = layout[i];
      report.cells[i] = detail::run_cell(p, cfg, b, s, d);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::future<void>> tasks;
    for (unsigned t = 0; t < threads; ++t) tasks.push_back(std::async(std::launch::async, work, t));
    for (auto& t : tasks) t.get();
  }

  // Once a (seq, decode) series runs out of memory, larger batches do too.
  std::map<std::pair<int, int>, int> first_oom;
  for (const auto& c : report.cells) {
    if (!c.oom) continue;
    auto key = std::make_pair(c.seq, c.decode);
    auto it = first_oom.find(key);
    if (it == first_oom.end() || c.batch < it->second) first_oom[key] = c.batch;
  }
  for (auto& c : report.cells) {
    auto it = first_oom.find({c.seq, c.decode});
    if (it != first_oom.end() && c.batch > it->second) c = BenchCell{c.batch, c.seq, c.decode, true};
  }
  return report;
}

// ---- serialization -------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json to_json(const Percentiles& p) {
  return {{"p50", p.p50}, {"p90", p.p90}, {"p95", p.p95}};
}
inline nlohmann::ordered_json to_json(const PhaseStats& s) {
  return {{"latency_ms", to_json(s.latency_ms)}, {"throughput_tok_s", to_json(s.throughput_tok_s)}};
}
inline Percentiles percentiles_from(const nlohmann::json& j) {
  return {j.at("p50").get<double>(), j.at("p90").get<double>(), j.at("p95").get<double>()};
}
inline PhaseStats phase_from(const nlohmann::json& j) {
  return {percentiles_from(j.at("latency_ms")), percentiles_from(j.at("throughput_tok_s"))};
}

inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw InvalidInput("bad number in report: '" + s + "'");
  return x;
}

inline int parse_int(const std::string& s) {
  int x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw InvalidInput("bad integer in report: '" + s + "'");
  return x;
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const BenchReport& r) {
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json j{{"batch", c.batch}, {"seq", c.seq}, {"decode", c.decode}, {"oom", c.oom}};
    if (!c.oom) {
      j["prefill"] = detail::to_json(*c.prefill);
      j["decode_phase"] = detail::to_json(*c.decode_phase);
      j["total_ms_p50"] = *c.total_ms_p50;
      j["derived_qps_p50"] = *c.derived_qps_p50;
    }
    cells.push_back(std::move(j));
  }
  return {{"profile", r.profile}, {"seed", r.seed},           {"runs", r.runs},
          {"warmup_runs", r.warmup_runs}, {"jitter_cv", r.jitter_cv}, {"cells", std::move(cells)}};
}

inline BenchReport report_from_json(const nlohmann::json& j) {
  BenchReport r;
  try {
    r.profile = j.at("profile").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.runs = j.at("runs").get<int>();
    r.warmup_runs = j.at("warmup_runs").get<int>();
    r.jitter_cv = j.at("jitter_cv").get<double>();
    for (const auto& jc : j.at("cells")) {
      BenchCell c{jc.at("batch").get<int>(), jc.at("seq").get<int>(), jc.at("decode").get<int>(), jc.at("oom").get<bool>()};
      if (!c.oom) {
        c.prefill = detail::phase_from(jc.at("prefill"));
        c.decode_phase = detail::phase_from(jc.at("decode_phase"));
        c.total_ms_p50 = jc.at("total_ms_p50").get<double>();
        c.derived_qps_p50 = jc.at("derived_qps_p50").get<double>();
      }
      r.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("bench report json: ") + e.what());
  }
  return r;
}

inline const std::vector<std::string>& report_csv_header() {
  static const std::vector<std::string> h{
      "batch", "seq", "decode", "oom",
      "prefill_latency_ms_p50", "prefill_latency_ms_p90", "prefill_latency_ms_p95",
      "prefill_throughput_tok_s_p50", "prefill_throughput_tok_s_p90", "prefill_throughput_tok_s_p95",
      "decode_latency_ms_p50", "decode_latency_ms_p90", "decode_latency_ms_p95",
      "decode_throughput_tok_s_p50", "decode_throughput_tok_s_p90", "decode_throughput_tok_s_p95",
      "total_ms_p50", "derived_qps_p50"};
  return h;
}

// One row per cell; OOM rows leave the statistic columns empty. Run metadata
// (profile, seed, ...) is only carried by the JSON form.
inline std::string report_to_csv(const BenchReport& r) {
  std::string out = csv::format_row(report_csv_header());
  for (const auto& c : r.cells) {
    csv::Row row{std::to_string(c.batch), std::to_string(c.seq), std::to_string(c.decode), c.oom ? "true" : "false"};
    auto push = [&](const Percentiles& p) {
      for (double x : {p.p50, p.p90, p.p95}) row.push_back(detail::format_double(x));
    };
    if (c.oom) {
      row.resize(report_csv_header().size());
    } else {
      push(c.prefill->latency_ms);
      push(c.prefill->throughput_tok_s);
      push(c.decode_phase->latency_ms);
      push(c.decode_phase->throughput_tok_s);
      row.push_back(detail::format_double(*c.total_ms_p50));
      row.push_back(detail::format_double(*c.derived_qps_p50));
    }
    out += csv::format_row(row);
  }
  return out;
}

inline std::vector<BenchCell> cells_from_csv(std::string_view data) {
  auto rows = csv::parse(data);
  if (rows.empty() || rows.front() != report_csv_header()) throw InvalidInput("bench csv: unexpected header");
  std::vector<BenchCell> cells;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != report_csv_header().size()) throw InvalidInput("bench csv: row " + std::to_string(i) + " has wrong width");
    BenchCell c{detail::parse_int(row[0]), detail::parse_int(row[1]), detail::parse_int(row[2]), row[3] == "true"};
    if (!c.oom) {
      auto pct = [&](std::size_t at) {
        return Percentiles{detail::parse_double(row[at]), detail::parse_double(row[at + 1]), detail::parse_double(row[at + 2])};
      };
      c.prefill = PhaseStats{pct(4), pct(7)};
      c.decode_phase = PhaseStats{pct(10), pct(13)};
      c.total_ms_p50 = detail::parse_double(row[16]);
      c.derived_qps_p50 = detail::parse_double(row[17]);
    }
    cells.push_back(std::move(c));
  }
  return cells;
}

enum class ReportFormat { kJson, kCsv };

inline void write_report(const BenchReport& r, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  if (format == ReportFormat::kJson) {
    out << report_to_json(r).dump(2) << '\n';
  } else {
    out << report_to_csv(r);
  }
  if (!out) throw IoError("write failed: " + path);
}

inline BenchReport read_report(const std::string& path) {
  const std::string text = csv::read_text(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw InvalidInput("bench report is not valid JSON: " + path);
  return report_from_json(j);
}

}  // namespace gg
