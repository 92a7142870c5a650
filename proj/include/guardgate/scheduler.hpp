#pragma once

// Request admission, batch formation and the short-then-long fallback
// protocol.
//
// Every request is chunked; each chunk becomes one work item. Items are
// batched FIFO and sent to the backend first in short mode (short prompt,
// coded output). An item whose output fails to decode goes back to the head
// of the queue in long mode (long prompt, uncoded output). Once every chunk
// is resolved the chunk verdicts are aggregated into one outcome. A batch's
// latency is charged to every member.
//
// SchedulerCore holds the protocol and is clock-agnostic: drivers tell it
// when a batch finished. Scheduler is the threaded driver used by the HTTP
// service; the load tester drives cores on a simulated clock.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "guardgate/batch_queue.hpp"
#include "guardgate/chunker.hpp"
#include "guardgate/error.hpp"
#include "guardgate/lexicon.hpp"
#include "guardgate/simulator.hpp"
#include "guardgate/verdict.hpp"

namespace gg {

enum class ModeHint { kAuto, kShort, kLong };

inline std::optional<ModeHint> mode_hint_from_string(std::string_view s) {
  if (s == "auto") return ModeHint::kAuto;
  if (s == "short") return ModeHint::kShort;
  if (s == "long") return ModeHint::kLong;
  return std::nullopt;
}

struct SchedulerConfig {
  int max_batch = 8;
  double batch_window_ms = 5.0;
  int short_decode_len = 20;
  int long_decode_len = 64;
  int short_prompt_tokens = 100;
  int long_prompt_tokens = 397;
  int max_fallback_attempts = 1;
  std::size_t queue_capacity = 1024;  // queued work items (chunks)
  std::uint64_t seed = 0;
  TokenizerPolicy tokenizer;

  void validate() const {
    if (max_batch < 1 || short_decode_len < 1 || long_decode_len < 1 || short_prompt_tokens < 1 ||
        long_prompt_tokens < 1 || queue_capacity < 1) {
      throw InvalidInput("scheduler config: counts must be >= 1");
    }
    if (max_fallback_attempts < 0) throw InvalidInput("scheduler config: max_fallback_attempts must be >= 0");
    if (batch_window_ms < 0) throw InvalidInput("scheduler config: batch_window_ms must be >= 0");
    if (tokenizer.max_tokens < 1) throw InvalidInput("scheduler config: max_tokens must be >= 1");
  }

  // Short-mode decode budget needed to hold a 1 s p50 target.
  bool sla1_compatible() const noexcept { return short_decode_len <= 20; }
};

struct ClassifyRequest {
  std::uint64_t id = 0;
  std::string text;
  ModeHint mode_hint = ModeHint::kAuto;
  double enqueue_ms = 0;
};

inline std::uint64_t next_request_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

enum class OutcomeError { kNone, kTerminalParse, kBackend };

struct ClassifyOutcome {
  std::uint64_t id = 0;
  std::optional<Verdict> verdict;
  std::vector<Verdict> chunk_verdicts;
  int attempts = 0;
  bool used_fallback = false;
  double latency_ms = 0;
  OutcomeError error = OutcomeError::kNone;
  std::string error_message;

  bool ok() const noexcept { return verdict.has_value(); }
};

struct GenerationItem {
  std::string_view text;
  GenerationMode mode = GenerationMode::kShort;
  int seq_tokens = 0;
  int decode_len = 0;
  std::uint64_t seed = 0;
};

struct GenerationResult {
  std::vector<std::string> outputs;  // one per item, same order
  double latency_ms = 0;
};

// Anything that turns a batch of prompts into raw model text. Called from a
// single scheduler loop at a time, but implementations used by several loops
// must be safe for concurrent calls.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenerationResult generate(std::span<const GenerationItem> batch, std::uint64_t batch_seed) const = 0;
};

// Lexicon scorer + latency simulator. The batch runs as one static batch at
// the mean input length and the longest decode length among its items.
class SimulatedBackend final : public Backend {
 public:
  struct Options {
    double short_corruption = 0.0;
    double long_corruption = 0.0;
    double threshold = 0.5;
  };

  SimulatedBackend(DeploymentProfile profile, std::shared_ptr<const Lexicon> lexicon, Options opts)
      : profile_(std::move(profile)), lexicon_(std::move(lexicon)), opts_(opts) {
    profile_.validate();
    if (!lexicon_) throw InvalidInput("SimulatedBackend: null lexicon");
  }

  GenerationResult generate(std::span<const GenerationItem> batch, std::uint64_t batch_seed) const override {
    GenerationResult r;
    if (batch.empty()) return r;
    double seq_sum = 0;
    int decode = 0;
    r.outputs.reserve(batch.size());
    for (const auto& item : batch) {
      seq_sum += item.seq_tokens;
      decode = std::max(decode, item.decode_len);
      const double rate = item.mode == GenerationMode::kShort ? opts_.short_corruption : opts_.long_corruption;
      r.outputs.push_back(generate_output(score_text(item.text, *lexicon_, opts_.threshold), item.mode, rate, item.seed));
    }
    try {
      r.latency_ms = simulate_batch(profile_, static_cast<int>(batch.size()), seq_sum / static_cast<double>(batch.size()),
                                    decode, batch_seed)
                         .total_ms;
    } catch (const OutOfMemory& e) {
      throw BackendError(e.what());
    }
    return r;
  }

  const DeploymentProfile& profile() const noexcept { return profile_; }

 private:
  DeploymentProfile profile_;
  std::shared_ptr<const Lexicon> lexicon_;
  Options opts_;
};

class SchedulerCore {
 public:
  using Completion = std::function<void(ClassifyOutcome)>;

 private:
  struct RequestState {
    ClassifyRequest req;
    std::vector<Chunk> chunks;
    std::vector<std::optional<Verdict>> verdicts;
    std::vector<int> attempts;
    std::size_t unresolved = 0;
    bool used_fallback = false;
    OutcomeError error = OutcomeError::kNone;
    std::string error_message;
    Completion done;
  };

 public:
  struct WorkItem {
    std::shared_ptr<RequestState> request;
    std::size_t chunk = 0;
    GenerationMode mode = GenerationMode::kShort;
    int attempt = 1;  // 1-based attempt number for this chunk
    int long_attempts = 0;

    double enqueue_ms() const noexcept { return request->req.enqueue_ms; }
  };

  explicit SchedulerCore(SchedulerConfig cfg) : cfg_(std::move(cfg)), queue_(cfg_.queue_capacity) { cfg_.validate(); }

  const SchedulerConfig& config() const noexcept { return cfg_; }

  // Thread-safe. Throws InvalidInput for blank text and QueueFull when the
  // chunks would not fit in the queue.
  void admit(ClassifyRequest req, Completion done) {
    if (req.text.find_first_not_of(" \t\r\n\f\v") == std::string::npos) throw InvalidInput("text is empty");
    auto state = std::make_shared<RequestState>();
    state->chunks = split_chunks(req.text, cfg_.tokenizer);
    if (state->chunks.empty()) throw InvalidInput("text has no tokens");
    state->req = std::move(req);
    state->verdicts.resize(state->chunks.size());
    state->attempts.assign(state->chunks.size(), 0);
    state->unresolved = state->chunks.size();
    state->done = std::move(done);

    const GenerationMode first = state->req.mode_hint == ModeHint::kLong ? GenerationMode::kLong : GenerationMode::kShort;
    std::vector<WorkItem> items;
    items.reserve(state->chunks.size());
    for (std::size_t c = 0; c < state->chunks.size(); ++c) {
      items.push_back(WorkItem{state, c, first, 1, first == GenerationMode::kLong ? 1 : 0});
    }
    if (!queue_.try_push_all(std::move(items))) {
      throw QueueFull("queue full (" + std::to_string(queue_.capacity()) + " items)");
    }
  }

  BatchQueue<WorkItem>& queue() noexcept { return queue_; }
  std::size_t queued() const { return queue_.size(); }

  std::optional<double> oldest_enqueue_ms() const {
    auto f = queue_.front();
    if (!f) return std::nullopt;
    return f->enqueue_ms();
  }

  // Non-blocking: up to max_batch items, FIFO.
  std::vector<WorkItem> form_batch() { return queue_.pop_batch(static_cast<std::size_t>(cfg_.max_batch)); }

  std::vector<GenerationItem> to_generation(const std::vector<WorkItem>& batch) const {
    std::vector<GenerationItem> out;
    out.reserve(batch.size());
    for (const auto& w : batch) {
      const Chunk& ch = w.request->chunks[w.chunk];
      const bool is_short = w.mode == GenerationMode::kShort;
      out.push_back(GenerationItem{
          ch.text, w.mode,
          static_cast<int>(ch.token_count) + (is_short ? cfg_.short_prompt_tokens : cfg_.long_prompt_tokens),
          is_short ? cfg_.short_decode_len : cfg_.long_decode_len,
          mix_seed({cfg_.seed, w.request->req.id, w.chunk, static_cast<std::uint64_t>(w.attempt)})});
    }
    return out;
  }

  std::uint64_t next_batch_seed() { return mix_seed({cfg_.seed, 0xBA7C4ull, batch_counter_++}); }

  // Applies backend outputs for a batch that finished at end_ms.
  void complete(std::vector<WorkItem> batch, const GenerationResult& result, double end_ms) {
    if (result.outputs.size() != batch.size()) {
      fail(std::move(batch), "backend returned " + std::to_string(result.outputs.size()) + " outputs for a batch of " +
                                 std::to_string(batch.size()),
           end_ms);
      return;
    }
    std::vector<WorkItem> retry;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      WorkItem& w = batch[i];
      RequestState& st = *w.request;
      st.attempts[w.chunk] = std::max(st.attempts[w.chunk], w.attempt);
      try {
        st.verdicts[w.chunk] =
            w.mode == GenerationMode::kShort ? decode_verdict(result.outputs[i]) : parse_uncoded(result.outputs[i]);
        resolve(w.request, end_ms);
      } catch (const ParseError& e) {
        if (st.req.mode_hint == ModeHint::kAuto && w.long_attempts < cfg_.max_fallback_attempts) {
          st.used_fallback = true;
          retry.push_back(WorkItem{w.request, w.chunk, GenerationMode::kLong, w.attempt + 1, w.long_attempts + 1});
        } else {
          if (st.error == OutcomeError::kNone) {
            st.error = OutcomeError::kTerminalParse;
            st.error_message = std::string("unparseable ") + std::string(to_string(w.mode)) + "-mode output: " + e.reason();
          }
          resolve(w.request, end_ms);
        }
      }
    }
    if (!retry.empty()) queue_.push_front(std::move(retry));
  }

  void fail(std::vector<WorkItem> batch, const std::string& why, double end_ms) {
    for (auto& w : batch) {
      RequestState& st = *w.request;
      st.attempts[w.chunk] = std::max(st.attempts[w.chunk], w.attempt);
      if (st.error == OutcomeError::kNone) {
        st.error = OutcomeError::kBackend;
        st.error_message = why;
      }
      resolve(w.request, end_ms);
    }
  }

  // Runs one batch synchronously starting at start_ms; returns the time it
  // finished (start_ms when the queue was empty).
  double step(const Backend& backend, double start_ms) {
    auto batch = form_batch();
    if (batch.empty()) return start_ms;
    return run(std::move(batch), backend, start_ms);
  }

  double run(std::vector<WorkItem> batch, const Backend& backend, double start_ms) {
    const auto items = to_generation(batch);
    GenerationResult result;
    try {
      result = backend.generate(items, next_batch_seed());
    } catch (const std::exception& e) {
      fail(std::move(batch), std::string("backend error: ") + e.what(), start_ms);
      return start_ms;
    }
    const double end = start_ms + result.latency_ms;
    complete(std::move(batch), result, end);
    return end;
  }

 private:
  void resolve(const std::shared_ptr<RequestState>& sp, double end_ms) {
    RequestState& st = *sp;
    if (--st.unresolved != 0) return;
    ClassifyOutcome out;
    out.id = st.req.id;
    out.attempts = *std::max_element(st.attempts.begin(), st.attempts.end());
    out.used_fallback = st.used_fallback;
    out.latency_ms = end_ms - st.req.enqueue_ms;
    out.error = st.error;
    out.error_message = st.error_message;
    if (st.error == OutcomeError::kNone) {
      out.chunk_verdicts.reserve(st.verdicts.size());
      for (auto& v : st.verdicts) out.chunk_verdicts.push_back(std::move(*v));
      out.verdict = aggregate(out.chunk_verdicts);
    }
    if (st.done) st.done(std::move(out));
    st.done = nullptr;
  }

  SchedulerConfig cfg_;
  BatchQueue<WorkItem> queue_;
  std::uint64_t batch_counter_ = 0;
};

// Classifies one text on its own: chunk, short mode per chunk, long-mode
// fallback on parse failure, aggregate. Chunks share batches (up to
// max_batch); latency is the sum of the batch latencies. Terminal failures
// come back as an outcome with error set.
inline ClassifyOutcome classify_with_fallback(std::string_view text, const SchedulerConfig& cfg, const Backend& backend,
                                              std::uint64_t request_id = 0) {
  const std::uint64_t id = request_id ? request_id : next_request_id();
  SchedulerConfig local = cfg;
  local.queue_capacity = std::numeric_limits<std::size_t>::max() / 2;
  // Each call gets a fresh core, so fold the id into the seed to keep batch
  // jitter independent across calls.
  local.seed = mix_seed({cfg.seed, id});
  SchedulerCore core(local);
  std::optional<ClassifyOutcome> result;
  core.admit(ClassifyRequest{id, std::string(text), ModeHint::kAuto, 0.0},
             [&](ClassifyOutcome o) { result = std::move(o); });
  double clock = 0;
  while (!result && core.queued() > 0) clock = core.step(backend, clock);
  return std::move(*result);
}

// Threaded driver: one loop thread owns batch execution; producers call
// submit() from any thread and receive a future.
//
// Latency accounting: with time_scale > 0 the loop sleeps for
// latency * time_scale real time per batch and the clock is wall time divided
// by time_scale. With time_scale == 0 nothing sleeps and the clock only
// advances by simulated batch latencies.
class Scheduler {
 public:
  Scheduler(SchedulerConfig cfg, std::shared_ptr<const Backend> backend, double time_scale = 0.0)
      : core_(std::move(cfg)), backend_(std::move(backend)), time_scale_(time_scale) {
    if (!backend_) throw InvalidInput("Scheduler: null backend");
    if (time_scale_ < 0) throw InvalidInput("Scheduler: time_scale must be >= 0");
  }

  ~Scheduler() { stop(); }

  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  void start() {
    std::lock_guard lock(lifecycle_);
    if (running_) return;
    origin_ = std::chrono::steady_clock::now();
    running_ = true;
    worker_ = std::thread([this] { loop(); });
  }

  // Closes the queue and lets the loop finish what is already queued. New
  // submissions are refused from here on.
  void stop() {
    std::lock_guard lock(lifecycle_);
    if (!running_) return;
    running_ = false;
    core_.queue().close();
    if (worker_.joinable()) worker_.join();
    core_.fail(core_.queue().drain(), "scheduler stopped", now_ms());
  }

  bool running() const noexcept { return running_.load(); }

  std::future<ClassifyOutcome> submit(std::string text, ModeHint hint = ModeHint::kAuto) {
    if (!running_) throw BackendError("scheduler is not running");
    auto promise = std::make_shared<std::promise<ClassifyOutcome>>();
    auto fut = promise->get_future();
    core_.admit(ClassifyRequest{next_request_id(), std::move(text), hint, now_ms()},
                [promise](ClassifyOutcome o) { promise->set_value(std::move(o)); });
    return fut;
  }

  const SchedulerConfig& config() const noexcept { return core_.config(); }
  std::size_t queued() const { return core_.queued(); }

 private:
  double now_ms() const {
    if (time_scale_ == 0.0) return virtual_now_.load();
    const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - origin_).count();
    return elapsed / time_scale_;
  }

  void loop() {
    auto& q = core_.queue();
    const double scale = time_scale_ > 0.0 ? time_scale_ : 1.0;
    const auto window = std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::duration<double, std::milli>(core_.config().batch_window_ms * scale));
    while (q.wait_nonempty()) {
      auto batch = q.form_batch(static_cast<std::size_t>(core_.config().max_batch), window);
      if (batch.empty()) continue;
      const double start = now_ms();
      const auto items = core_.to_generation(batch);
      GenerationResult result;
      try {
        result = backend_->generate(items, core_.next_batch_seed());
      } catch (const std::exception& e) {
        core_.fail(std::move(batch), std::string("backend error: ") + e.what(), start);
        continue;
      }
      const double end = start + result.latency_ms;
      if (time_scale_ > 0.0) {
        std::this_thread::sleep_until(origin_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                    std::chrono::duration<double, std::milli>(end * time_scale_)));
      } else {
        virtual_now_.store(end);
      }
      core_.complete(std::move(batch), result, end);
    }
  }

  SchedulerCore core_;
  std::shared_ptr<const Backend> backend_;
  double time_scale_;
  std::chrono::steady_clock::time_point origin_ = std::chrono::steady_clock::now();
  std::atomic<double> virtual_now_{0.0};
  std::atomic<bool> running_{false};
  std::mutex lifecycle_;
  std::thread worker_;
};

}  // namespace gg
