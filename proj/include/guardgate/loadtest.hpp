#pragma once

// Open-loop load generator over N in-process replicas, run as a
// discrete-event simulation so a 60 s test finishes in well under a second.
// Each replica is a SchedulerCore over its own SimulatedBackend; requests go
// to the replica with the fewest outstanding items.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "guardgate/lexicon.hpp"
#include "guardgate/metrics.hpp"
#include "guardgate/planner.hpp"
#include "guardgate/scheduler.hpp"
#include "guardgate/simulator.hpp"

namespace gg {

// Synthetic inputs with a uniform token count in [min_tokens, max_tokens].
// A fraction of texts carry one lexicon pattern so the scorer has work to do.
class TextMix {
 public:
  TextMix(int min_tokens, int max_tokens, std::vector<std::string> flagged_terms = {}, double flagged_fraction = 0.0,
          std::uint64_t seed = 1)
      : min_(min_tokens), max_(max_tokens), flagged_(std::move(flagged_terms)), fraction_(flagged_fraction), gen_(seed) {
    if (min_ < 1 || max_ < min_) throw InvalidInput("text mix: need 1 <= min_tokens <= max_tokens");
    if (fraction_ < 0 || fraction_ > 1) throw InvalidInput("text mix: flagged_fraction must be in [0,1]");
  }

  std::string next() {
    static constexpr const char* kWords[] = {
        "the",     "students", "read",   "a",       "chapter", "about", "river",   "systems", "and",     "wrote",
        "notes",   "on",       "how",    "water",   "moves",   "from",  "hills",   "to",      "the",     "sea",
        "teacher", "asked",    "each",   "group",   "explain", "one",   "diagram", "using",   "simple",  "words",
        "recycling", "saves",  "energy", "because", "old",     "cans",  "become",  "new",     "ones",    "quickly"};
    constexpr std::size_t kCount = sizeof kWords / sizeof kWords[0];
    const int n = std::uniform_int_distribution<int>(min_, max_)(gen_);
    std::optional<int> flag_at;
    if (!flagged_.empty() && std::bernoulli_distribution(fraction_)(gen_)) {
      flag_at = std::uniform_int_distribution<int>(0, n - 1)(gen_);
    }
    std::string out;
    out.reserve(static_cast<std::size_t>(n) * 7);
    std::uniform_int_distribution<std::size_t> pick(0, kCount - 1);
    for (int i = 0; i < n; ++i) {
      if (i) out.push_back(' ');
      if (flag_at && *flag_at == i) {
        // Multi-word patterns would change the token count; use the first word.
        const auto& term = flagged_[std::uniform_int_distribution<std::size_t>(0, flagged_.size() - 1)(gen_)];
        out += term.substr(0, term.find(' '));
      } else {
        out += kWords[pick(gen_)];
      }
      if (i % 12 == 11 || i == n - 1) out.push_back('.');
    }
    return out;
  }

 private:
  int min_, max_;
  std::vector<std::string> flagged_;
  double fraction_;
  std::mt19937_64 gen_;
};

struct LoadTestConfig {
  std::string profile = "mistral7b-a100";
  std::optional<double> jitter_cv;
  int replicas = 4;
  double target_qps = 50.0;
  double duration_s = 60.0;
  bool poisson = true;
  std::optional<std::pair<int, int>> token_range;  // defaults to the SLA's range
  double flagged_fraction = 0.05;
  SchedulerConfig scheduler;
  double short_corruption = 1e-2;
  double long_corruption = 1e-3;
  double threshold = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (replicas < 1) throw InvalidInput("load test: replicas must be >= 1");
    if (!(target_qps > 0)) throw InvalidInput("load test: target_qps must be > 0");
    if (!(duration_s > 0)) throw InvalidInput("load test: duration must be > 0");
    scheduler.validate();
  }
};

struct LoadTestReport {
  std::string sla;
  ServiceMetrics metrics;
  bool pass = false;
  std::vector<std::string> failures;
  std::uint64_t batches = 0;
  double mean_batch_size = 0;
  double makespan_s = 0;  // last completion, simulated seconds
};

inline LoadTestReport load_test(const LoadTestConfig& cfg, const SlaSpec& sla, std::shared_ptr<const Lexicon> lexicon,
                                const ProfileRegistry& registry = ProfileRegistry{}) {
  cfg.validate();
  if (!lexicon) throw InvalidInput("load test: null lexicon");
  DeploymentProfile profile = registry.get(cfg.profile);
  if (cfg.jitter_cv) profile = profile.with_jitter(*cfg.jitter_cv);

  struct Replica {
    std::unique_ptr<SchedulerCore> core;
    std::unique_ptr<SimulatedBackend> backend;
    bool busy = false;
    std::vector<SchedulerCore::WorkItem> in_flight;
    GenerationResult pending;
  };
  std::vector<Replica> replicas(static_cast<std::size_t>(cfg.replicas));
  for (std::size_t r = 0; r < replicas.size(); ++r) {
    SchedulerConfig sc = cfg.scheduler;
    sc.seed = mix_seed({cfg.seed, 0x5245504Cull, r});
    replicas[r].core = std::make_unique<SchedulerCore>(sc);
    replicas[r].backend = std::make_unique<SimulatedBackend>(
        profile, lexicon, SimulatedBackend::Options{cfg.short_corruption, cfg.long_corruption, cfg.threshold});
  }

  enum class Kind { kArrival, kBatchDone, kWake };
  struct Event {
    double t;
    std::uint64_t seq;
    Kind kind;
    std::size_t replica;
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t event_seq = 0;
  auto schedule = [&](double t, Kind k, std::size_t r = 0) { events.push({t, event_seq++, k, r}); };

  std::vector<RequestRecord> records;
  LoadTestReport report;
  report.sla = sla.name;
  std::uint64_t batched_items = 0;
  double last_completion_ms = 0;

  auto record_outcome = [&](ClassifyOutcome o) {
    records.push_back({o.ok() ? RequestResult::kSuccess : RequestResult::kError, o.latency_ms, o.used_fallback});
  };

  const double window = cfg.scheduler.batch_window_ms;
  auto try_start = [&](std::size_t r, double now) {
    Replica& rep = replicas[r];
    if (rep.busy || rep.core->queued() == 0) return;
    const double oldest = *rep.core->oldest_enqueue_ms();
    const bool full = rep.core->queued() >= static_cast<std::size_t>(cfg.scheduler.max_batch);
    if (!full && now < oldest + window) {
      schedule(oldest + window, Kind::kWake, r);
      return;
    }
    auto batch = rep.core->form_batch();
    const auto items = rep.core->to_generation(batch);
    try {
      rep.pending = rep.backend->generate(items, rep.core->next_batch_seed());
    } catch (const std::exception& e) {
      rep.core->fail(std::move(batch), std::string("backend error: ") + e.what(), now);
      return;
    }
    ++report.batches;
    batched_items += batch.size();
    rep.in_flight = std::move(batch);
    rep.busy = true;
    schedule(now + rep.pending.latency_ms, Kind::kBatchDone, r);
  };

  const auto [lo, hi] = cfg.token_range.value_or(sla.seq_range);
  std::vector<std::string> terms;
  for (const auto& e : lexicon->entries()) terms.push_back(e.pattern);
  TextMix mix(lo, hi, terms, cfg.flagged_fraction, mix_seed({cfg.seed, 0x54455854ull}));

  std::mt19937_64 arrivals(mix_seed({cfg.seed, 0x41525256ull}));
  std::exponential_distribution<double> gap(cfg.target_qps / 1000.0);
  const double end_ms = cfg.duration_s * 1000.0;
  auto next_gap = [&] { return cfg.poisson ? gap(arrivals) : 1000.0 / cfg.target_qps; };
  if (double first = next_gap(); first < end_ms) schedule(first, Kind::kArrival);

  while (!events.empty()) {
    const Event ev = events.top();
    events.pop();
    switch (ev.kind) {
      case Kind::kArrival: {
        std::size_t best = 0;
        std::size_t best_load = std::numeric_limits<std::size_t>::max();
        for (std::size_t r = 0; r < replicas.size(); ++r) {
          const std::size_t load = replicas[r].core->queued() + replicas[r].in_flight.size();
          if (load < best_load) best = r, best_load = load;
        }
        try {
          replicas[best].core->admit(ClassifyRequest{next_request_id(), mix.next(), ModeHint::kAuto, ev.t}, record_outcome);
          try_start(best, ev.t);
        } catch (const QueueFull&) {
          records.push_back({RequestResult::kRejected, 0, false});
        }
        const double t = ev.t + next_gap();
        if (t < end_ms) schedule(t, Kind::kArrival);
        break;
      }
      case Kind::kBatchDone: {
        Replica& rep = replicas[ev.replica];
        rep.busy = false;
        rep.core->complete(std::move(rep.in_flight), rep.pending, ev.t);
        rep.in_flight.clear();
        last_completion_ms = ev.t;
        try_start(ev.replica, ev.t);
        break;
      }
      case Kind::kWake: try_start(ev.replica, ev.t); break;
    }
  }

  report.metrics = summarize(records, cfg.duration_s);
  report.mean_batch_size = report.batches ? static_cast<double>(batched_items) / static_cast<double>(report.batches) : 0;
  report.makespan_s = last_completion_ms / 1000.0;

  const auto& m = report.metrics;
  if (m.latency_p50_ms > sla.p50_latency_ms) {
    report.failures.push_back("p50 " + std::to_string(m.latency_p50_ms) + " ms exceeds " +
                              std::to_string(sla.p50_latency_ms) + " ms");
  }
  if (sla.availability && m.availability < *sla.availability) {
    report.failures.push_back("availability " + std::to_string(m.availability) + " below " +
                              std::to_string(*sla.availability));
  }
  if (sla.error_budget && m.error_rate > *sla.error_budget) {
    report.failures.push_back("error rate " + std::to_string(m.error_rate) + " above " +
                              std::to_string(*sla.error_budget));
  }
  report.pass = report.failures.empty();
  return report;
}

inline nlohmann::ordered_json loadtest_to_json(const LoadTestReport& r) {
  return {{"sla", r.sla},
          {"pass", r.pass},
          {"failures", r.failures},
          {"batches", r.batches},
          {"mean_batch_size", r.mean_batch_size},
          {"makespan_s", r.makespan_s},
          {"metrics", metrics_to_json(r.metrics)}};
}

}  // namespace gg
