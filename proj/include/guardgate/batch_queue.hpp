#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

namespace gg {

// Bounded FIFO shared between producers and a single batching consumer.
// Items pushed back to the front (retries) bypass the bound so that work
// already admitted is never dropped.
template <typename T>
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  // All-or-nothing admission of a group of items.
  bool try_push_all(std::vector<T> items) {
    {
      std::lock_guard lock(mu_);
      if (closed_ || items_.size() + items.size() > capacity_) return false;
      for (auto& item : items) items_.push_back(std::move(item));
    }
    cv_.notify_all();
    return true;
  }

  bool try_push(T item) {
    std::vector<T> one;
    one.push_back(std::move(item));
    return try_push_all(std::move(one));
  }

  // Re-inserts at the head, preserving the relative order of items.
  void push_front(std::vector<T> items) {
    {
      std::lock_guard lock(mu_);
      for (auto it = items.rbegin(); it != items.rend(); ++it) items_.push_front(std::move(*it));
    }
    cv_.notify_all();
  }

  std::vector<T> pop_batch(std::size_t max) {
    std::lock_guard lock(mu_);
    return take_locked(max);
  }

  // Returns up to max items. When fewer than max are queued, waits at most
  // window for the queue to fill before returning what is there (possibly
  // nothing).
  template <typename Rep, typename Period>
  std::vector<T> form_batch(std::size_t max, std::chrono::duration<Rep, Period> window) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, window, [&] { return closed_ || items_.size() >= max; });
    return take_locked(max);
  }

  // Blocks until at least one item is queued or the queue is closed.
  // Returns false when closed and empty.
  bool wait_nonempty() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
    return !items_.empty();
  }

  std::optional<T> front() const {
    std::lock_guard lock(mu_);
    if (items_.empty()) return std::nullopt;
    return items_.front();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

  std::size_t capacity() const noexcept { return capacity_; }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    return take_locked(items_.size());
  }

 private:
  std::vector<T> take_locked(std::size_t max) {
    std::vector<T> out;
    const std::size_t n = std::min(max, items_.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(std::move(items_.front()));
      items_.pop_front();
    }
    return out;
  }

  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

}  // namespace gg
