#pragma once

// Latency-vs-throughput regime analysis and per-replica capacity planning.
//
// Walking up the batch sizes, an interval is memory-bound while throughput
// still scales (ratio per batch doubling >= theta) and compute-bound once it
// flattens. The chosen batch is the largest one reached while still
// memory-bound; with no memory-bound interval, the lowest-latency batch wins.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "guardgate/bench.hpp"
#include "guardgate/error.hpp"
#include "guardgate/simulator.hpp"

namespace gg {

struct SlaSpec {
  std::string name;
  double p50_latency_ms = 0;
  std::optional<double> target_qps;
  std::optional<double> availability;
  std::optional<double> error_budget;
  std::pair<int, int> seq_range{1, 3000};

  static SlaSpec sla1() { return {"sla1", 1000.0, 50.0, 0.9999, 1e-4, {500, 1000}}; }
  static SlaSpec sla2() { return {"sla2", 3000.0, std::nullopt, std::nullopt, std::nullopt, {1000, 3000}}; }

  static SlaSpec by_name(std::string_view name) {
    if (name == "sla1") return sla1();
    if (name == "sla2") return sla2();
    throw InvalidInput("unknown SLA: " + std::string(name));
  }
};

inline constexpr double kDefaultRegimeThreshold = 1.5;

struct RegimePoint {
  int batch = 0;
  double latency_ms = 0;
  double throughput = 0;
};

struct RegimeInterval {
  int from_batch = 0;
  int to_batch = 0;
  double throughput_ratio = 0;  // normalised to one batch doubling
  Regime regime = Regime::kMemoryBound;
};

inline double derived_qps(int batch, double total_ms) {
  if (!(total_ms > 0)) throw InvalidInput("total latency must be > 0");
  return batch * 1000.0 / total_ms;
}

inline std::vector<RegimeInterval> classify_regimes(std::span<const RegimePoint> points,
                                                    double theta = kDefaultRegimeThreshold) {
  if (points.size() < 2) throw TooFewPoints("regime classification needs at least two points");
  std::vector<RegimeInterval> out;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& a = points[i - 1];
    const auto& b = points[i];
    if (b.batch <= a.batch) throw InvalidInput("points must be in ascending batch order");
    double ratio = a.throughput > 0 ? b.throughput / a.throughput : 0.0;
    const double doublings = std::log2(static_cast<double>(b.batch) / a.batch);
    if (ratio > 0) ratio = std::pow(ratio, 1.0 / doublings);
    out.push_back({a.batch, b.batch, ratio, ratio >= theta ? Regime::kMemoryBound : Regime::kComputeBound});
  }
  return out;
}

inline int select_batch(std::span<const RegimePoint> points, std::span<const RegimeInterval> regimes) {
  if (points.empty()) throw EmptyInput("select_batch: no points");
  std::optional<int> chosen;
  for (const auto& r : regimes) {
    if (r.regime != Regime::kMemoryBound) break;
    chosen = r.to_batch;
  }
  if (chosen) return *chosen;
  const auto best = std::min_element(points.begin(), points.end(),
                                     [](const RegimePoint& x, const RegimePoint& y) { return x.latency_ms < y.latency_ms; });
  return best->batch;
}

struct PlanDecision {
  std::string sla;
  int seq = 0;
  int decode = 0;
  std::vector<RegimeInterval> regimes;
  int selected_batch = 0;
  double total_ms_p50 = 0;
  double derived_qps = 0;
  int replicas = 1;
  bool sla_met = false;
  std::string rationale;
};

inline int replicas_for(double target_qps, double per_replica_qps) {
  if (!(per_replica_qps > 0)) throw InvalidInput("per-replica QPS must be > 0");
  // Shave float noise so an exact multiple does not round up.
  return std::max(1, static_cast<int>(std::ceil(target_qps / per_replica_qps - 1e-9)));
}

inline PlanDecision plan(const BenchReport& report, const SlaSpec& sla, int seq, int decode,
                         double theta = kDefaultRegimeThreshold) {
  std::vector<RegimePoint> points;
  bool any_cell = false;
  for (const auto& c : report.cells) {
    if (c.seq != seq || c.decode != decode) continue;
    any_cell = true;
    if (c.oom) continue;
    points.push_back({c.batch, *c.total_ms_p50, *c.derived_qps_p50});
  }
  if (!any_cell) throw MissingCell("report has no cells for seq " + std::to_string(seq) + ", decode " + std::to_string(decode));
  if (points.empty()) throw MissingCell("every batch size ran out of memory for seq " + std::to_string(seq));
  std::sort(points.begin(), points.end(), [](const auto& x, const auto& y) { return x.batch < y.batch; });

  PlanDecision d;
  d.sla = sla.name;
  d.seq = seq;
  d.decode = decode;
  std::ostringstream why;
  if (points.size() >= 2) {
    d.regimes = classify_regimes(points, theta);
    d.selected_batch = select_batch(points, d.regimes);
    const bool memory_branch = !d.regimes.empty() && d.regimes.front().regime == Regime::kMemoryBound;
    why << (memory_branch ? "largest batch in the memory-bound region" : "no memory-bound interval; lowest-latency batch")
        << " (theta " << theta << ")";
  } else {
    d.selected_batch = points.front().batch;
    why << "single non-OOM batch size available";
  }
  const auto& sel = *std::find_if(points.begin(), points.end(), [&](const auto& p) { return p.batch == d.selected_batch; });
  d.total_ms_p50 = sel.latency_ms;
  d.derived_qps = derived_qps(sel.batch, sel.latency_ms);
  d.replicas = sla.target_qps ? replicas_for(*sla.target_qps, d.derived_qps) : 1;
  d.sla_met = d.total_ms_p50 <= sla.p50_latency_ms;
  why << "; batch " << d.selected_batch << " gives p50 " << d.total_ms_p50 << " ms and " << d.derived_qps << " QPS per replica";
  if (sla.target_qps) why << "; " << d.replicas << " replica(s) for " << *sla.target_qps << " QPS";
  why << "; p50 bound " << sla.p50_latency_ms << " ms " << (d.sla_met ? "met" : "missed");
  d.rationale = why.str();
  return d;
}

inline nlohmann::ordered_json plan_to_json(const PlanDecision& d) {
  nlohmann::ordered_json regimes = nlohmann::ordered_json::array();
  for (const auto& r : d.regimes) {
    regimes.push_back({{"from_batch", r.from_batch},
                       {"to_batch", r.to_batch},
                       {"throughput_ratio", r.throughput_ratio},
                       {"regime", std::string(to_string(r.regime))}});
  }
  return {{"sla", d.sla},
          {"seq", d.seq},
          {"decode", d.decode},
          {"regimes", std::move(regimes)},
          {"selected_batch", d.selected_batch},
          {"total_ms_p50", d.total_ms_p50},
          {"derived_qps", d.derived_qps},
          {"replicas", d.replicas},
          {"sla_met", d.sla_met},
          {"rationale", d.rationale}};
}

inline std::string plan_table(const PlanDecision& d) {
  std::ostringstream os;
  os << "SLA " << d.sla << "  seq " << d.seq << "  decode " << d.decode << "\n";
  os << "  interval      ratio   regime\n";
  for (const auto& r : d.regimes) {
    char line[96];
    std::snprintf(line, sizeof line, "  %4d -> %-4d  %6.3f  %s\n", r.from_batch, r.to_batch, r.throughput_ratio,
                  std::string(to_string(r.regime)).c_str());
    os << line;
  }
  char tail[160];
  std::snprintf(tail, sizeof tail, "  selected batch %d  p50 %.1f ms  %.2f QPS/replica  replicas %d  SLA %s\n",
                d.selected_batch, d.total_ms_p50, d.derived_qps, d.replicas, d.sla_met ? "met" : "missed");
  os << tail;
  return os.str();
}

}  // namespace gg
