#pragma once

// Completion handling strategies. Each CQ gets one Poller that runs the
// selected state machine on the simulated host.
//
// Spinning on an empty CQ is not simulated poll by poll: the poller records
// the grid of future poll instants and a watcher on the CQ jumps straight to
// the first poll that would see the next arrival. Retry counts, arming time
// and CPU time come out the same as iterating.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rdmabox/session.hpp"
#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/verbs.hpp"

namespace rdmabox {

enum class PollingKind : std::uint8_t { kEventTriggered, kBusy, kEventBatch, kHybrid, kSharedCq, kAdaptive };

inline const char* to_string(PollingKind k) {
  switch (k) {
    case PollingKind::kEventTriggered: return "event";
    case PollingKind::kBusy: return "busy";
    case PollingKind::kEventBatch: return "event_batch";
    case PollingKind::kHybrid: return "hybrid";
    case PollingKind::kSharedCq: return "shared_cq";
    case PollingKind::kAdaptive: return "adaptive";
  }
  return "?";
}

struct PollingStrategy {
  PollingKind kind = PollingKind::kAdaptive;
  std::uint32_t budget = 16;       // EventBatch
  std::uint32_t shared_cqs = 1;    // SharedCq
  std::uint32_t max_poll_wc = 16;  // Adaptive (also the per-poll batch of Busy/SharedCq)
  std::uint32_t max_retry = 120;   // Adaptive
  // false keeps `retry` counting across productive polls instead of resetting it.
  bool reset_retry_on_success = true;

  static PollingStrategy event_triggered() { return {PollingKind::kEventTriggered}; }
  static PollingStrategy busy() { return {PollingKind::kBusy}; }
  static PollingStrategy event_batch(std::uint32_t b) {
    PollingStrategy s{PollingKind::kEventBatch};
    s.budget = b;
    return s;
  }
  static PollingStrategy hybrid() { return {PollingKind::kHybrid}; }
  static PollingStrategy shared_cq(std::uint32_t m) {
    PollingStrategy s{PollingKind::kSharedCq};
    s.shared_cqs = m;
    return s;
  }
  static PollingStrategy adaptive(std::uint32_t max_poll_wc = 16, std::uint32_t max_retry = 120) {
    PollingStrategy s{PollingKind::kAdaptive};
    s.max_poll_wc = max_poll_wc;
    s.max_retry = max_retry;
    return s;
  }

  bool spins_forever() const { return kind == PollingKind::kBusy || kind == PollingKind::kSharedCq; }

  void validate() const {
    require(budget >= 1, "polling: budget must be >= 1");
    require(max_poll_wc >= 1, "polling: max_poll_wc must be >= 1");
    require(kind != PollingKind::kSharedCq || shared_cqs >= 1, "polling: shared_cq needs m >= 1");
  }
};

struct PollCosts {
  SimTime poll_cost = 80;     // one poll_cq call, empty or not
  SimTime handle_cost = 300;  // run-to-completion handling of one WC
  SimTime interrupt_cost = 2000;
  SimTime context_switch_cost = 3000;
};

enum class PollerMode : std::uint8_t { kArmedIdle, kPolling, kSpinning };

// One handler entry: an interrupt (or the initial start of a spinning poller)
// and how many completions were handled before the poller armed again.
struct EntryRecord {
  CqId cq = 0;
  SimTime at = 0;
  std::uint64_t wc_polled = 0;
};

class Poller {
 public:
  Poller(Simulator& sim, HostCpu& cpu, Session& session, CompletionQueue& cq, PollingStrategy strategy,
         PollCosts costs)
      : sim_(sim), cpu_(cpu), session_(session), cq_(cq), st_(strategy), costs_(costs) {
    st_.validate();
    cq_.set_interrupt_handler([this] { on_interrupt(); });
  }

  Poller(const Poller&) = delete;
  Poller& operator=(const Poller&) = delete;

  void start() {
    if (st_.spins_forever()) {
      begin_active();
      entries_.push_back(EntryRecord{cq_.id(), sim_.now(), 0});
      poll_now();
    } else {
      cq_.request_notify();
    }
  }

  PollerMode mode() const { return mode_; }
  std::uint32_t retry() const { return retry_; }
  const std::vector<EntryRecord>& entries() const { return entries_; }
  std::uint64_t empty_polls() const { return empty_polls_; }
  std::uint64_t handled() const { return handled_; }

  // Busy CPU time so far, including a spin still in progress.
  SimTime cpu_busy_time(SimTime now) const {
    SimTime t = cpu_time_;
    if (active_) t += now - active_since_;
    return t;
  }

 private:
  std::size_t batch_limit() const {
    switch (st_.kind) {
      case PollingKind::kEventTriggered: return 1;
      case PollingKind::kEventBatch: return st_.budget;
      case PollingKind::kHybrid: return cq_.capacity();
      default: return st_.max_poll_wc;
    }
  }

  void on_interrupt() {
    auto& m = sim_.metrics();
    m.inc(metric::kInterrupts);
    m.inc(metric::kContextSwitches);
    mode_ = PollerMode::kPolling;
    sim_.schedule_in(0, EventKind::kInterrupt, [this] {
      SimTime d = cpu_.run(costs_.interrupt_cost + costs_.context_switch_cost, [this] {
        begin_active();
        retry_ = 0;
        entries_.push_back(EntryRecord{cq_.id(), sim_.now(), 0});
        poll_now();
      }, EventKind::kInterrupt);
      cpu_time_ += d;
    });
  }

  void begin_active() {
    require(!active_, "poller entered twice");
    active_ = true;
    active_since_ = sim_.now();
    cpu_.spin_begin();
    mode_ = PollerMode::kPolling;
  }

  void end_active() {
    require(active_, "poller left without entering");
    active_ = false;
    cpu_time_ += sim_.now() - active_since_;
    cpu_.spin_end();
  }

  void poll_now() {
    const SimTime p = cpu_.dilate(costs_.poll_cost);
    auto wcs = cq_.poll(batch_limit());
    const std::size_t k = wcs.size();
    auto& m = sim_.metrics();
    m.inc(metric::kWcPolled, k);
    m.inc("poll_calls");
    if (k == 0) {
      on_empty_poll(sim_.now(), p);
      return;
    }
    entries_.back().wc_polled += k;
    const SimTime h = cpu_.dilate(costs_.handle_cost);
    auto batch = std::make_shared<std::vector<WorkCompletion>>(std::move(wcs));
    for (std::size_t i = 0; i < k; ++i) {
      sim_.schedule_in(p + (i + 1) * h, EventKind::kActorWakeup, [this, batch, i] {
        ++handled_;
        session_.handle((*batch)[i]);
      });
    }
    sim_.schedule_in(p + k * h, EventKind::kActorWakeup, [this] { after_batch(); });
  }

  void after_batch() {
    switch (st_.kind) {
      case PollingKind::kEventTriggered:
      case PollingKind::kEventBatch:
        arm_and_return();
        return;
      case PollingKind::kAdaptive:
        if (st_.reset_retry_on_success) retry_ = 0;
        [[fallthrough]];
      default:
        poll_now();
    }
  }

  // The poll at `s` found nothing and ends at s + p.
  void on_empty_poll(SimTime s, SimTime p) {
    ++empty_polls_;
    switch (st_.kind) {
      case PollingKind::kEventTriggered:
      case PollingKind::kEventBatch:
      case PollingKind::kHybrid:
        sim_.schedule_at(s + p, EventKind::kActorWakeup, [this] { arm_and_return(); });
        return;
      case PollingKind::kAdaptive:
        if (retry_ >= st_.max_retry) {
          sim_.schedule_at(s + p, EventKind::kActorWakeup, [this] { arm_and_return(); });
          return;
        }
        ++retry_;
        break;
      default:
        break;
    }
    spin(s, p);
  }

  // Keeps polling on the grid s + j*p. For Adaptive the last poll allowed is
  // j = max_retry - retry(at s) + ... as tracked by `retry_`; the arm happens
  // one period after that final empty poll.
  void spin(SimTime s, SimTime p) {
    mode_ = PollerMode::kSpinning;
    const std::uint64_t gen = ++spin_gen_;
    const bool bounded = st_.kind == PollingKind::kAdaptive;
    // retry_ already counts the poll at s. Further empty polls at s + j*p for
    // j = 1..last; the one that finds retry >= max_retry arms afterwards.
    const std::uint64_t r1 = retry_;
    const std::uint64_t last = bounded ? (st_.max_retry >= r1 ? st_.max_retry - r1 + 1 : 1) : 0;
    if (bounded) {
      sim_.schedule_at(s + (last + 1) * p, EventKind::kActorWakeup, [this, gen, last] {
        if (gen != spin_gen_) return;
        cq_.clear_watch();
        empty_polls_ += last;
        retry_ = st_.max_retry;
        arm_and_return();
      });
    }
    cq_.watch_next_arrival([this, gen, s, p, bounded, last, r1] {
      if (gen != spin_gen_) return;
      const SimTime a = sim_.now();
      std::uint64_t j = a <= s ? 1 : ceil_div(a - s, p);
      if (j == 0) j = 1;
      if (bounded && j > last) return;  // the pending arm will see it and interrupt
      ++spin_gen_;
      empty_polls_ += j - 1;
      if (bounded) retry_ = static_cast<std::uint32_t>(r1 + (j - 1));
      sim_.schedule_at(s + j * p, EventKind::kActorWakeup, [this] {
        mode_ = PollerMode::kPolling;
        poll_now();
      });
    });
  }

  void arm_and_return() {
    end_active();
    mode_ = PollerMode::kArmedIdle;
    cq_.request_notify();
  }

  Simulator& sim_;
  HostCpu& cpu_;
  Session& session_;
  CompletionQueue& cq_;
  PollingStrategy st_;
  PollCosts costs_;

  PollerMode mode_ = PollerMode::kArmedIdle;
  std::uint32_t retry_ = 0;
  bool active_ = false;
  SimTime active_since_ = 0;
  SimTime cpu_time_ = 0;
  std::uint64_t spin_gen_ = 0;
  std::uint64_t empty_polls_ = 0;
  std::uint64_t handled_ = 0;
  std::vector<EntryRecord> entries_;
};

}  // namespace rdmabox
