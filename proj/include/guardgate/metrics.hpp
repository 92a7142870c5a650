#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <mutex>
#include <span>
#include <vector>

#include <json.hpp>

#include "guardgate/bench.hpp"

namespace gg {

enum class RequestResult { kSuccess, kError, kRejected, kInvalid };

struct RequestRecord {
  RequestResult result = RequestResult::kSuccess;
  double latency_ms = 0;  // meaningful for kSuccess / kError
  bool used_fallback = false;
};

struct ServiceMetrics {
  double window_s = 0;
  double qps = 0;  // successful completions per second
  double latency_p50_ms = 0;
  double latency_p90_ms = 0;
  double latency_p95_ms = 0;
  double error_rate = 0;
  double availability = 1.0;
  double fallback_rate = 0;
  std::uint64_t submitted = 0;
  std::uint64_t succeeded = 0;
  std::uint64_t errors = 0;
  std::uint64_t rejected = 0;
  std::uint64_t invalid = 0;
};

// Availability counts terminal errors and load-shedding rejections against
// the service; malformed requests (4xx other than 429) do not. Latency
// percentiles cover every request that ran to completion, errors included.
inline ServiceMetrics summarize(std::span<const RequestRecord> records, double window_s) {
  ServiceMetrics m;
  m.window_s = window_s;
  std::vector<double> latencies;
  std::uint64_t fallbacks = 0;
  for (const auto& r : records) {
    ++m.submitted;
    switch (r.result) {
      case RequestResult::kSuccess:
        ++m.succeeded;
        latencies.push_back(r.latency_ms);
        break;
      case RequestResult::kError:
        ++m.errors;
        latencies.push_back(r.latency_ms);
        break;
      case RequestResult::kRejected: ++m.rejected; break;
      case RequestResult::kInvalid: ++m.invalid; break;
    }
    if (r.used_fallback) ++fallbacks;
  }
  const std::uint64_t served = m.succeeded + m.errors + m.rejected;
  if (window_s > 0) m.qps = static_cast<double>(m.succeeded) / window_s;
  if (!latencies.empty()) {
    m.latency_p50_ms = percentile(latencies, 0.50);
    m.latency_p90_ms = percentile(latencies, 0.90);
    m.latency_p95_ms = percentile(latencies, 0.95);
    m.fallback_rate = static_cast<double>(fallbacks) / static_cast<double>(latencies.size());
  }
  if (served > 0) {
    m.error_rate = static_cast<double>(m.errors) / static_cast<double>(served);
    m.availability = 1.0 - static_cast<double>(m.errors + m.rejected) / static_cast<double>(served);
  }
  return m;
}

inline nlohmann::ordered_json metrics_to_json(const ServiceMetrics& m) {
  return {{"window_s", m.window_s},
          {"qps", m.qps},
          {"latency_ms", {{"p50", m.latency_p50_ms}, {"p90", m.latency_p90_ms}, {"p95", m.latency_p95_ms}}},
          {"error_rate", m.error_rate},
          {"availability", m.availability},
          {"fallback_rate", m.fallback_rate},
          {"counts",
           {{"submitted", m.submitted},
            {"succeeded", m.succeeded},
            {"errors", m.errors},
            {"rejected", m.rejected},
            {"invalid", m.invalid}}}};
}

// Thread-safe sliding-window registry for the live service.
class MetricsRegistry {
 public:
  using Clock = std::chrono::steady_clock;

  explicit MetricsRegistry(double retention_s = 3600.0) : retention_(retention_s) {}

  void record(RequestRecord r, Clock::time_point at = Clock::now()) {
    std::lock_guard lock(mu_);
    events_.push_back({at, r});
    const auto horizon = at - std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(retention_));
    while (!events_.empty() && events_.front().at < horizon) events_.pop_front();
  }

  ServiceMetrics snapshot(double window_s, Clock::time_point now = Clock::now()) const {
    std::vector<RequestRecord> in_window;
    {
      std::lock_guard lock(mu_);
      const auto from = now - std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(window_s));
      for (const auto& e : events_)
        if (e.at >= from && e.at <= now) in_window.push_back(e.record);
    }
    return summarize(in_window, window_s);
  }

 private:
  struct Event {
    Clock::time_point at;
    RequestRecord record;
  };
  double retention_;
  mutable std::mutex mu_;
  std::deque<Event> events_;
};

}  // namespace gg
