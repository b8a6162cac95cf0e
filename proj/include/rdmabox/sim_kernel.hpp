#pragma once

// Deterministic discrete-event core: virtual clock, ordered event queue and
// the metrics registry every other module reports into.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rdmabox {

// Nanoseconds of virtual time.
using SimTime = std::uint64_t;

inline constexpr SimTime kNever = std::numeric_limits<SimTime>::max();

inline constexpr SimTime operator""_ns(unsigned long long v) { return v; }
inline constexpr SimTime operator""_us(unsigned long long v) { return v * 1000; }
inline constexpr SimTime operator""_ms(unsigned long long v) { return v * 1000 * 1000; }

inline constexpr std::uint64_t operator""_KiB(unsigned long long v) { return v * 1024; }
inline constexpr std::uint64_t operator""_MiB(unsigned long long v) { return v * 1024 * 1024; }

// Raised when a caller breaks an operation's precondition. A run that hits one
// is aborted; nothing downstream tries to recover.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

enum class EventKind : std::uint8_t {
  kPostArrival,
  kNicStep,
  kCompletionDelivery,
  kInterrupt,
  kActorWakeup,
};

struct SimEvent {
  SimTime fire_at = 0;
  EventKind kind = EventKind::kActorWakeup;
  std::function<void()> payload;
  std::uint64_t seq = 0;
};

// ---------------------------------------------------------------------------
// Metrics

// Step-function gauge: keeps a time-weighted integral and a sampled series so
// that sampling never needs its own events.
class Gauge {
 public:
  explicit Gauge(SimTime sample_interval = 100_us) : interval_(sample_interval) {}

  void set(SimTime now, std::int64_t value) {
    advance(now);
    value_ = value;
    max_ = std::max(max_, value_);
  }
  void add(SimTime now, std::int64_t delta) { set(now, value_ + delta); }

  // Brings the integral and the series up to `now` without changing the value.
  void advance(SimTime now) {
    if (now <= last_) return;
    integral_ += static_cast<long double>(value_) * static_cast<long double>(now - last_);
    while (next_sample_ <= now) {
      series_.push_back(value_);
      next_sample_ += interval_;
    }
    last_ = now;
  }

  std::int64_t value() const { return value_; }
  std::int64_t max() const { return max_; }
  const std::vector<std::int64_t>& series() const { return series_; }
  SimTime sample_interval() const { return interval_; }

  // Mean over [0, last advance].
  double mean() const {
    if (last_ == 0) return static_cast<double>(value_);
    return static_cast<double>(integral_ / static_cast<long double>(last_));
  }

 private:
  SimTime interval_;
  SimTime last_ = 0;
  SimTime next_sample_ = 0;
  std::int64_t value_ = 0;
  std::int64_t max_ = 0;
  long double integral_ = 0;
  std::vector<std::int64_t> series_;
};

class Histogram {
 public:
  void record(std::uint64_t v) {
    samples_.push_back(v);
    sum_ += v;
    sorted_ = false;
  }
  std::size_t count() const { return samples_.size(); }
  double mean() const {
    return samples_.empty() ? 0.0
                            : static_cast<double>(sum_) / static_cast<double>(samples_.size());
  }
  // Nearest-rank percentile, q in [0, 100].
  std::uint64_t percentile(double q) const {
    if (samples_.empty()) return 0;
    sort();
    auto rank = static_cast<std::size_t>(q / 100.0 * static_cast<double>(samples_.size()) + 0.999999999);
    rank = std::clamp<std::size_t>(rank, 1, samples_.size());
    return samples_[rank - 1];
  }
  std::uint64_t max() const {
    if (samples_.empty()) return 0;
    sort();
    return samples_.back();
  }
  const std::vector<std::uint64_t>& samples() const { return samples_; }

 private:
  void sort() const {
    if (!sorted_) {
      std::sort(samples_.begin(), samples_.end());
      sorted_ = true;
    }
  }
  mutable std::vector<std::uint64_t> samples_;
  mutable bool sorted_ = true;
  std::uint64_t sum_ = 0;
};

namespace metric {
inline constexpr const char* kWqePosted = "wqe_posted";
inline constexpr const char* kMmio = "mmio_count";
inline constexpr const char* kDmaRead = "dma_read_count";
inline constexpr const char* kInterrupts = "interrupts";
inline constexpr const char* kContextSwitches = "context_switches";
inline constexpr const char* kWcPolled = "wc_polled";
inline constexpr const char* kMerges = "merges";
inline constexpr const char* kChains = "chains";
inline constexpr const char* kRequestsIn = "requests_in";
inline constexpr const char* kRequestsCompleted = "requests_completed";
inline constexpr const char* kInFlightBytes = "in_flight_bytes";
inline constexpr const char* kInFlightOps = "in_flight_ops";
inline constexpr const char* kMergeQueueDepth = "merge_queue_depth";
inline constexpr const char* kRequestLatency = "request_latency";
inline constexpr const char* kIoCompletionTime = "io_completion_time";
}  // namespace metric

class MetricsRegistry {
 public:
  explicit MetricsRegistry(SimTime sample_interval = 100_us) : interval_(sample_interval) {
    for (const char* c : {metric::kWqePosted, metric::kMmio, metric::kDmaRead, metric::kInterrupts,
                          metric::kContextSwitches, metric::kWcPolled, metric::kMerges,
                          metric::kChains, metric::kRequestsIn, metric::kRequestsCompleted}) {
      counters_[c] = 0;
    }
    for (const char* g : {metric::kInFlightBytes, metric::kInFlightOps, metric::kMergeQueueDepth}) {
      gauges_.emplace(g, Gauge(interval_));
    }
    histograms_[metric::kRequestLatency];
    histograms_[metric::kIoCompletionTime];
  }

  void inc(const std::string& name, std::uint64_t by = 1) {
    counters_[name] += by;
    if (name == metric::kRequestsCompleted || name == metric::kRequestsIn) {
      require(counters_[metric::kRequestsCompleted] <= counters_[metric::kRequestsIn],
              "requests_completed exceeds requests_in");
    }
  }
  std::uint64_t counter(const std::string& name) const {
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second;
  }
  const std::map<std::string, std::uint64_t>& counters() const { return counters_; }

  Gauge& gauge(const std::string& name) {
    auto it = gauges_.find(name);
    if (it == gauges_.end()) it = gauges_.emplace(name, Gauge(interval_)).first;
    return it->second;
  }
  const Gauge& gauge(const std::string& name) const { return gauges_.at(name); }
  const std::map<std::string, Gauge>& gauges() const { return gauges_; }

  Histogram& histogram(const std::string& name) { return histograms_[name]; }
  const Histogram& histogram(const std::string& name) const { return histograms_.at(name); }
  const std::map<std::string, Histogram>& histograms() const { return histograms_; }

  void advance_gauges(SimTime now) {
    for (auto& [_, g] : gauges_) g.advance(now);
  }

 private:
  SimTime interval_;
  std::map<std::string, std::uint64_t> counters_;
  std::map<std::string, Gauge> gauges_;
  std::map<std::string, Histogram> histograms_;
};

// ---------------------------------------------------------------------------
// Event loop

struct RunSummary {
  SimTime clock = 0;
  std::uint64_t events_dispatched = 0;
  std::map<std::string, std::uint64_t> counters;
};

class Simulator {
 public:
  explicit Simulator(SimTime sample_interval = 100_us) : metrics_(sample_interval) {}

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  SimTime now() const { return now_; }
  MetricsRegistry& metrics() { return metrics_; }
  const MetricsRegistry& metrics() const { return metrics_; }

  void schedule(SimEvent event) {
    if (event.fire_at < now_) {
      throw ContractViolation("event scheduled into the past (fire_at=" +
                              std::to_string(event.fire_at) + ", now=" + std::to_string(now_) + ")");
    }
    event.seq = next_seq_++;
    queue_.push(std::move(event));
  }

  void schedule_at(SimTime at, EventKind kind, std::function<void()> fn) {
    schedule(SimEvent{at, kind, std::move(fn), 0});
  }
  void schedule_in(SimTime delay, EventKind kind, std::function<void()> fn) {
    schedule_at(now_ + delay, kind, std::move(fn));
  }

  bool idle() const { return queue_.empty(); }
  SimTime next_event_time() const { return queue_.empty() ? kNever : queue_.top().fire_at; }
  std::uint64_t dispatched() const { return dispatched_; }

  // Dispatches every event with fire_at <= deadline. The clock ends on the last
  // dispatched event, or on the deadline when events remain beyond it.
  RunSummary run_until(SimTime deadline) {
    while (!queue_.empty() && queue_.top().fire_at <= deadline) {
      // priority_queue::top is const; the payload is moved out before pop.
      SimEvent ev = std::move(const_cast<SimEvent&>(queue_.top()));
      queue_.pop();
      now_ = ev.fire_at;
      ++dispatched_;
      if (observer_) observer_(ev);
      if (ev.payload) ev.payload();
    }
    if (!queue_.empty() && deadline != kNever) now_ = std::max(now_, deadline);
    metrics_.advance_gauges(now_);
    return RunSummary{now_, dispatched_, metrics_.counters()};
  }

  RunSummary run() { return run_until(kNever); }

  // Called before each dispatch; used by tests to observe ordering.
  void set_observer(std::function<void(const SimEvent&)> obs) { observer_ = std::move(obs); }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
      return a.seq > b.seq;
    }
  };

  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t dispatched_ = 0;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  MetricsRegistry metrics_;
  std::function<void(const SimEvent&)> observer_;
};

// ---------------------------------------------------------------------------
// Host CPU budget. Work started while more than `cpus` entities are runnable
// is stretched by runnable/cpus (sampled when the work starts). Spinning
// pollers hold a runnable slot for as long as they spin.
class HostCpu {
 public:
  HostCpu(Simulator& sim, std::uint32_t cpus) : sim_(sim), cpus_(std::max<std::uint32_t>(cpus, 1)) {}

  std::uint32_t cpus() const { return cpus_; }
  std::uint32_t runnable() const { return runnable_; }

  SimTime dilate(SimTime work, std::uint32_t extra = 0) const {
    std::uint64_t n = runnable_ + extra;
    if (n <= cpus_) return work;
    return (work * n + cpus_ - 1) / cpus_;
  }

  // Runs `work` ns of CPU work for the caller; `done` fires when it finishes.
  // Returns the stretched duration.
  SimTime run(SimTime work, std::function<void()> done,
              EventKind kind = EventKind::kActorWakeup) {
    SimTime dur = dilate(work, 1);
    ++runnable_;
    sim_.schedule_in(dur, kind, [this, done = std::move(done)] {
      --runnable_;
      if (done) done();
    });
    return dur;
  }

  void spin_begin() { ++runnable_; }
  void spin_end() {
    require(runnable_ > 0, "spin_end without spin_begin");
    --runnable_;
  }

 private:
  Simulator& sim_;
  std::uint32_t cpus_;
  std::uint32_t runnable_ = 0;
};

inline constexpr std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

// Per-byte costs are configured in picoseconds so sub-nanosecond rates stay exact.
inline constexpr SimTime bytes_cost(std::uint64_t bytes, std::uint64_t ps_per_byte) {
  return ceil_div(bytes * ps_per_byte, 1000);
}

}  // namespace rdmabox
