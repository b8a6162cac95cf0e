#pragma once

// Window-based in-flight byte limiter sitting on the merge queue.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>

#include "rdmabox/sim_kernel.hpp"

namespace rdmabox {

// Called after every completion with (in_flight_bytes, window_bytes,
// completion latency). Returning a value replaces the window.
using AdmissionHook =
    std::function<std::optional<std::uint64_t>(std::uint64_t, std::uint64_t, SimTime)>;

class TrafficRegulator {
 public:
  // window_bytes == 0 disables regulation. `sim` may be null, in which case
  // woken waiters run synchronously inside on_completion.
  TrafficRegulator(std::uint64_t window_bytes, std::uint64_t fragment_bytes, Simulator* sim = nullptr)
      : window_(window_bytes), fragment_(fragment_bytes), sim_(sim) {
    require(fragment_bytes > 0, "fragment_bytes must be positive");
  }

  bool enabled() const { return window_ != 0; }
  std::uint64_t window_bytes() const { return window_; }
  std::uint64_t fragment_bytes() const { return fragment_; }
  std::uint64_t in_flight_bytes() const { return in_flight_; }
  std::size_t waiters() const { return waiters_.size(); }
  std::uint64_t max_observed() const { return max_observed_; }

  std::uint64_t round_up(std::uint64_t bytes) const { return ceil_div(bytes, fragment_) * fragment_; }

  void set_hook(AdmissionHook hook) { hook_ = std::move(hook); }

  // Charges `need` bytes (rounded up to the fragment size) and runs
  // `admitted` once the window has room. Blocked callers are served FIFO.
  void traffic_pacer_blocking(std::uint64_t need, std::function<void()> admitted) {
    require(need > 0, "pacer need must be positive");
    need = round_up(need);
    if (enabled()) require(need <= window_, "request larger than the admission window");
    if (waiters_.empty() && fits(need)) {
      charge(need);
      admitted();
      return;
    }
    waiters_.push_back(Waiter{need, std::move(admitted)});
  }

  // Non-blocking variant used while extending a batch; never overtakes a
  // blocked waiter.
  bool try_acquire(std::uint64_t need) {
    need = round_up(need);
    if (!waiters_.empty() || !fits(need)) return false;
    charge(need);
    return true;
  }

  // Returns part of a reservation that ended up unused.
  void give_back(std::uint64_t bytes) {
    bytes = round_up(bytes);
    require(bytes <= in_flight_, "admission window underflow");
    in_flight_ -= bytes;
    wake();
  }

  void on_completion(std::uint64_t freed, SimTime latency_sample = 0) {
    freed = round_up(freed);
    require(freed <= in_flight_, "admission window underflow");
    in_flight_ -= freed;
    if (hook_) {
      if (auto w = hook_(in_flight_, window_, latency_sample)) {
        require(*w >= fragment_, "hook returned a window below the fragment size");
        window_ = *w;
      }
    }
    wake();
  }

 private:
  void wake() {
    while (!waiters_.empty() && fits(waiters_.front().need)) {
      Waiter w = std::move(waiters_.front());
      waiters_.pop_front();
      charge(w.need);
      if (sim_) {
        sim_->schedule_in(0, EventKind::kActorWakeup, std::move(w.admitted));
      } else {
        w.admitted();
      }
    }
  }

  struct Waiter {
    std::uint64_t need;
    std::function<void()> admitted;
  };

  bool fits(std::uint64_t need) const { return !enabled() || in_flight_ + need <= window_; }

  void charge(std::uint64_t need) {
    in_flight_ += need;
    max_observed_ = std::max(max_observed_, in_flight_);
  }

  std::uint64_t window_;
  std::uint64_t fragment_;
  Simulator* sim_;
  std::uint64_t in_flight_ = 0;
  std::uint64_t max_observed_ = 0;
  std::deque<Waiter> waiters_;
  AdmissionHook hook_;
};

// Thread-safe counterpart for real concurrent callers (stress mode). FIFO is
// enforced with tickets.
class ConcurrentRegulator {
 public:
  ConcurrentRegulator(std::uint64_t window_bytes, std::uint64_t fragment_bytes)
      : window_(window_bytes), fragment_(fragment_bytes) {}

  std::uint64_t round_up(std::uint64_t bytes) const { return ceil_div(bytes, fragment_) * fragment_; }

  void acquire(std::uint64_t need) {
    need = round_up(need);
    std::unique_lock lock(mu_);
    require(window_ == 0 || need <= window_, "request larger than the admission window");
    const std::uint64_t ticket = next_ticket_++;
    cv_.wait(lock, [&] { return ticket == serving_ && fits(need); });
    ++serving_;
    in_flight_ += need;
    if (window_ != 0 && in_flight_ > window_) violated_ = true;
    max_observed_ = std::max(max_observed_, in_flight_);
    cv_.notify_all();
  }

  bool try_acquire(std::uint64_t need) {
    need = round_up(need);
    std::lock_guard lock(mu_);
    if (next_ticket_ != serving_ || !fits(need)) return false;
    in_flight_ += need;
    max_observed_ = std::max(max_observed_, in_flight_);
    return true;
  }

  void release(std::uint64_t freed) {
    freed = round_up(freed);
    {
      std::lock_guard lock(mu_);
      require(freed <= in_flight_, "admission window underflow");
      in_flight_ -= freed;
    }
    cv_.notify_all();
  }

  std::uint64_t in_flight_bytes() const {
    std::lock_guard lock(mu_);
    return in_flight_;
  }
  std::uint64_t max_observed() const {
    std::lock_guard lock(mu_);
    return max_observed_;
  }
  bool violated() const {
    std::lock_guard lock(mu_);
    return violated_;
  }

 private:
  bool fits(std::uint64_t need) const { return window_ == 0 || in_flight_ + need <= window_; }

  std::uint64_t window_;
  std::uint64_t fragment_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t in_flight_ = 0;
  std::uint64_t max_observed_ = 0;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
  bool violated_ = false;
};

}  // namespace rdmabox
