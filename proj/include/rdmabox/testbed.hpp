#pragma once

// Assembles every module for one scenario run: NIC, session, regulator,
// merge engine, one poller per CQ, and the workload actors. Builds the run
// report afterwards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdmabox/admission.hpp"
#include "rdmabox/batching.hpp"
#include "rdmabox/nic_model.hpp"
#include "rdmabox/polling.hpp"
#include "rdmabox/scenario.hpp"
#include "rdmabox/session.hpp"
#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/verbs.hpp"
#include "rdmabox/workload.hpp"

namespace rdmabox {

inline constexpr const char* kReportSchema = "rdmabox-report/1";

struct RunResult {
  nlohmann::json report;
  // Handler entries across all pollers, ordered by entry time then CQ.
  std::vector<EntryRecord> entries;
  bool conserved = false;
  bool coverage_exact = false;
  double iops = 0;
  double bandwidth = 0;  // bytes per second
  SimTime makespan = 0;
  SimTime longest_idle_gap = 0;  // longest stretch with no completion delivered
};

// Trace the scenario replays (open/paced), generated or loaded per config.
inline Trace scenario_trace(const ScenarioConfig& cfg) {
  const auto& w = cfg.workload;
  switch (w.source) {
    case TraceSource::kKv: {
      MixSpec mix = w.kv;
      mix.nodes = cfg.session.peers;
      mix.actors = std::max<std::uint32_t>(1, w.actors);
      return gen_kv(mix, w.requests, cfg.seed);
    }
    case TraceSource::kBurst: {
      BurstSpec b = w.burst;
      b.nodes = cfg.session.peers;
      b.actors = std::max<std::uint32_t>(1, w.actors);
      return gen_burst(b, cfg.seed);
    }
    case TraceSource::kFile:
      return load_trace(w.trace_path);
  }
  return {};
}

class Testbed {
 public:
  explicit Testbed(ScenarioConfig cfg, std::optional<Trace> trace = std::nullopt)
      : cfg_(prepare(std::move(cfg))),
        sim_(cfg_.sample_interval),
        cpu_(sim_, cfg_.cpus),
        nic_(sim_, cfg_.nic),
        session_(sim_, nic_, cfg_.session),
        regulator_(cfg_.window_bytes, cfg_.fragment_bytes, &sim_),
        engine_(sim_, cpu_, session_, regulator_, cfg_.batching, cfg_.queue_capacity) {
    if (cfg_.workload.kind != WorkloadKind::kClosed) {
      trace_ = trace ? std::move(*trace) : scenario_trace(cfg_);
      for (const auto& r : trace_) {
        if (r.node >= cfg_.session.peers) throw ConfigError("workload", "trace targets node " + std::to_string(r.node) + " but only " + std::to_string(cfg_.session.peers) + " peers exist");
        if (cfg_.window_bytes > 0 && regulator_.round_up(r.len) > cfg_.window_bytes) {
          throw ConfigError("admission.window_bytes", "trace request of " + std::to_string(r.len) + " bytes exceeds the window");
        }
      }
    }
    for (const auto& cq : session_.cqs()) {
      pollers_.push_back(std::make_unique<Poller>(sim_, cpu_, session_, *cq, cfg_.polling, cfg_.poll_costs()));
    }
    session_.register_handler([this](const WorkCompletion& wc) { on_wc(wc); });
  }

  Testbed(const Testbed&) = delete;
  Testbed& operator=(const Testbed&) = delete;

  const ScenarioConfig& config() const { return cfg_; }
  Simulator& sim() { return sim_; }
  HostCpu& cpu() { return cpu_; }
  Nic& nic() { return nic_; }
  Session& session() { return session_; }
  TrafficRegulator& regulator() { return regulator_; }
  MergeEngine& engine() { return engine_; }
  const std::vector<std::unique_ptr<Poller>>& pollers() const { return pollers_; }
  const Trace& trace() const { return trace_; }

  // Number of work completions that covered each request (index = req_id).
  const std::vector<std::uint32_t>& coverage() const { return covered_; }

  RunResult run() {
    require(!ran_, "a testbed runs once");
    ran_ = true;
    for (auto& p : pollers_) p->start();
    switch (cfg_.workload.kind) {
      case WorkloadKind::kClosed: start_closed(); break;
      case WorkloadKind::kOpen: start_open(); break;
      case WorkloadKind::kPaced: start_paced(); break;
    }
    sim_.run();
    return build_result();
  }

 private:
  struct ReqInfo {
    std::uint64_t len = 0;
    SimTime arrive_at = 0;
    ActorId actor = 0;
  };

  struct Actor {
    ActorId id = 0;
    std::optional<std::uint16_t> node;
    std::unique_ptr<KvStream> stream;
    std::mt19937_64 rng;
    std::uint32_t outstanding = 0;
    bool waiting = false;
  };

  static ScenarioConfig prepare(ScenarioConfig c) {
    c.validate();
    c.session.shared_cqs = c.polling.kind == PollingKind::kSharedCq ? c.polling.shared_cqs : 0;
    return c;
  }

  ReqId submit(Direction dir, std::uint16_t node, std::uint64_t addr, std::uint64_t len, ActorId actor,
               std::function<void()> done) {
    const ReqId id = reqs_.size();
    reqs_.push_back(ReqInfo{len, sim_.now(), actor});
    covered_.push_back(0);
    if (first_arrival_ == kNever) first_arrival_ = sim_.now();
    DataRequest r{id, dir, NodeId{node}, addr, len, sim_.now(), actor};
    engine_.req_msg(r, std::move(done));
    return id;
  }

  void on_wc(const WorkCompletion& wc) {
    auto& m = sim_.metrics();
    const SimTime now = sim_.now();
    if (last_wc_ != kNever && now > last_wc_) longest_gap_ = std::max(longest_gap_, now - last_wc_);
    last_wc_ = now;
    for (ReqId id : wc.covers) {
      require(id < reqs_.size(), "completion covers an unknown request");
      ++covered_[id];
      const ReqInfo& info = reqs_[id];
      const SimTime latency = now - info.arrive_at;
      m.inc(metric::kRequestsCompleted);
      m.histogram(metric::kRequestLatency).record(latency);
      regulator_.on_completion(info.len, latency);
      completed_bytes_ += info.len;
      last_completion_ = now;
      if (now >= cfg_.warmup && now <= cfg_.duration) {
        ++window_completions_;
        window_bytes_ += info.len;
      }
      if (cfg_.workload.kind == WorkloadKind::kClosed) {
        Actor& a = actors_[info.actor];
        --a.outstanding;
        if (a.waiting) {
          a.waiting = false;
          issue(a);
        }
      } else if (cfg_.workload.kind == WorkloadKind::kPaced) {
        --paced_outstanding_;
        if (paced_outstanding_ == 0 && burst_issued_ && next_burst_ < bursts_.size()) {
          const SimTime gap = trace_[bursts_[next_burst_]].arrive_at - trace_[bursts_[next_burst_] - 1].arrive_at;
          burst_issued_ = false;
          sim_.schedule_in(gap, EventKind::kPostArrival, [this] { issue_burst(); });
        }
      }
    }
  }

  // ---- closed loop

  void start_closed() {
    const auto& w = cfg_.workload;
    const std::uint32_t n = w.effective_actors(cfg_.session.peers);
    MixSpec mix = w.kv;
    const bool pinned = w.actors_per_peer > 0;
    mix.nodes = pinned ? 1 : cfg_.session.peers;
    mix.mean_interarrival = 0;
    mix.clump = 1;
    mix.actors = 1;
    auto zipf = std::make_shared<const ZipfSampler>(mix.keyspace, mix.zipf_theta);
    actors_.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      Actor& a = actors_[i];
      a.id = i;
      if (pinned) a.node = static_cast<std::uint16_t>(i % cfg_.session.peers);
      a.stream = std::make_unique<KvStream>(mix, cfg_.seed * 1000003ull + i, zipf);
      a.rng.seed(cfg_.seed * 7919ull + i + 1);
    }
    for (auto& a : actors_) issue(a);
  }

  // Each think is followed by a clump of kv.clump back-to-back requests.
  void issue(Actor& a) {
    if (sim_.now() >= cfg_.duration) return;
    const std::uint32_t k = cfg_.workload.kv.clump;
    if (a.outstanding + k > cfg_.workload.depth) {
      a.waiting = true;
      return;
    }
    a.outstanding += k;  // reserved while thinking
    SimTime think = cfg_.workload.think;
    if (cfg_.workload.think_exponential && think > 0) {
      std::exponential_distribution<double> d(1.0 / static_cast<double>(think));
      think = static_cast<SimTime>(std::llround(d(a.rng)));
    }
    cpu_.run(think, [this, &a, k] {
      if (sim_.now() >= cfg_.duration) {
        a.outstanding -= k;
        return;
      }
      submit_clump(a, k);
    });
  }

  void submit_clump(Actor& a, std::uint32_t left) {
    TraceRecord rec = a.stream->next();
    const std::uint16_t node = a.node ? *a.node : rec.node;
    submit(rec.direction, node, rec.remote_addr, rec.len, a.id, [this, &a, left] {
      if (left > 1) {
        submit_clump(a, left - 1);
      } else {
        issue(a);
      }
    });
  }

  // ---- open loop replay

  void start_open() {
    if (trace_.empty()) return;
    sim_.schedule_at(trace_.front().arrive_at, EventKind::kPostArrival, [this] { open_arrival(); });
  }

  void open_arrival() {
    // Every record due at this instant arrives in trace order.
    const SimTime t = trace_[next_record_].arrive_at;
    while (next_record_ < trace_.size() && trace_[next_record_].arrive_at == t) {
      const auto& r = trace_[next_record_++];
      submit(r.direction, r.node, r.remote_addr, r.len, r.actor, [] {});
    }
    if (next_record_ < trace_.size()) {
      sim_.schedule_at(trace_[next_record_].arrive_at, EventKind::kPostArrival, [this] { open_arrival(); });
    }
  }

  // ---- paced replay: a gap of at least barrier_gap starts a new burst, which
  // begins only after every earlier request completed, plus the gap.

  void start_paced() {
    if (trace_.empty()) return;
    bursts_.push_back(0);
    for (std::size_t i = 1; i < trace_.size(); ++i) {
      if (trace_[i].arrive_at - trace_[i - 1].arrive_at >= cfg_.workload.barrier_gap) bursts_.push_back(i);
    }
    sim_.schedule_at(trace_.front().arrive_at, EventKind::kPostArrival, [this] { issue_burst(); });
  }

  void issue_burst() {
    const std::size_t b = next_burst_++;
    const std::size_t first = bursts_[b];
    const std::size_t last = b + 1 < bursts_.size() ? bursts_[b + 1] : trace_.size();
    const SimTime base = sim_.now();
    paced_outstanding_ += last - first;
    burst_issued_ = false;
    for (std::size_t i = first; i < last; ++i) {
      const SimTime at = base + (trace_[i].arrive_at - trace_[first].arrive_at);
      const bool tail = i + 1 == last;
      sim_.schedule_at(at, EventKind::kPostArrival, [this, i, tail] {
        const auto& r = trace_[i];
        submit(r.direction, r.node, r.remote_addr, r.len, r.actor, [] {});
        if (tail) burst_issued_ = true;
      });
    }
  }

  // ---- report

  static double window_mean(const std::vector<std::int64_t>& s, std::size_t lo, std::size_t hi) {
    if (lo >= hi) return 0;
    long double sum = 0;
    for (std::size_t i = lo; i < hi; ++i) sum += s[i];
    return static_cast<double>(sum / static_cast<long double>(hi - lo));
  }

  static double window_variance(const std::vector<std::int64_t>& s, std::size_t lo, std::size_t hi) {
    if (lo >= hi) return 0;
    const double mu = window_mean(s, lo, hi);
    long double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const long double d = static_cast<long double>(s[i]) - mu;
      acc += d * d;
    }
    return static_cast<double>(acc / static_cast<long double>(hi - lo));
  }

  RunResult build_result() {
    using nlohmann::json;
    auto& m = sim_.metrics();
    const SimTime end = sim_.now();
    m.advance_gauges(end);
    RunResult res;

    bool coverage = true;
    for (auto c : covered_) coverage = coverage && c == 1;
    res.coverage_exact = coverage;
    res.conserved = m.counter(metric::kRequestsCompleted) == m.counter(metric::kRequestsIn) &&
                    m.gauge(metric::kInFlightBytes).value() == 0 && m.gauge(metric::kInFlightOps).value() == 0 &&
                    regulator_.in_flight_bytes() == 0 && session_.mempool().in_use() == 0 &&
                    covered_.size() == m.counter(metric::kRequestsIn);

    const bool closed = cfg_.workload.kind == WorkloadKind::kClosed;
    // Window over which rates and series statistics are taken.
    SimTime lo_t, hi_t;
    if (closed) {
      lo_t = cfg_.warmup;
      hi_t = cfg_.duration;
    } else {
      lo_t = first_arrival_ == kNever ? 0 : first_arrival_;
      hi_t = last_completion_;
    }
    const double span_s = hi_t > lo_t ? static_cast<double>(hi_t - lo_t) * 1e-9 : 0.0;
    if (closed) {
      res.iops = span_s > 0 ? static_cast<double>(window_completions_) / span_s : 0;
      res.bandwidth = span_s > 0 ? static_cast<double>(window_bytes_) / span_s : 0;
    } else {
      res.iops = span_s > 0 ? static_cast<double>(m.counter(metric::kRequestsCompleted)) / span_s : 0;
      res.bandwidth = span_s > 0 ? static_cast<double>(completed_bytes_) / span_s : 0;
    }
    res.makespan = hi_t > lo_t ? hi_t - lo_t : 0;
    res.longest_idle_gap = longest_gap_;

    SimTime poller_cpu = 0;
    for (const auto& p : pollers_) {
      poller_cpu += p->cpu_busy_time(end);
      res.entries.insert(res.entries.end(), p->entries().begin(), p->entries().end());
    }
    std::stable_sort(res.entries.begin(), res.entries.end(), [](const EntryRecord& a, const EntryRecord& b) {
      return a.at != b.at ? a.at < b.at : a.cq < b.cq;
    });

    json rep;
    rep["schema"] = kReportSchema;
    json conf = json::object();
    for (const auto& [k, v] : echo_config(cfg_)) conf[k] = v;
    rep["config"] = conf;
    json counters = json::object();
    for (const auto& [k, v] : m.counters()) counters[k] = v;
    rep["counters"] = counters;

    const SimTime iv = cfg_.sample_interval;
    const std::size_t lo_i = static_cast<std::size_t>(lo_t / iv);
    json gauges = json::object();
    for (const auto& [name, g] : m.gauges()) {
      const auto& s = g.series();
      const std::size_t hi_i = std::min(s.size(), static_cast<std::size_t>(hi_t / iv) + 1);
      gauges[name] = json{{"final", g.value()},
                          {"max", g.max()},
                          {"mean", g.mean()},
                          {"window_mean", window_mean(s, std::min(lo_i, hi_i), hi_i)},
                          {"window_variance", window_variance(s, std::min(lo_i, hi_i), hi_i)},
                          {"sample_interval_ns", iv},
                          {"series", s}};
    }
    rep["gauges"] = gauges;
    json hists = json::object();
    for (const auto& [name, h] : m.histograms()) {
      hists[name] = json{{"count", h.count()}, {"mean", h.mean()}, {"p50", h.percentile(50)},
                         {"p99", h.percentile(99)}, {"max", h.max()}};
    }
    rep["histograms"] = hists;

    std::uint64_t entry_wc = 0;
    for (const auto& e : res.entries) entry_wc += e.wc_polled;
    rep["derived"] = json{{"iops", res.iops},
                          {"bandwidth_bytes_per_s", res.bandwidth},
                          {"window_start_ns", lo_t},
                          {"window_end_ns", hi_t},
                          {"end_clock_ns", end},
                          {"events_dispatched", sim_.dispatched()},
                          {"poller_cpu_ns", poller_cpu},
                          {"handler_entries", res.entries.size()},
                          {"entry_wc_polled", entry_wc},
                          {"nic_total_charged_ns", nic_.total_charged()},
                          {"regulator_max_in_flight", regulator_.max_observed()},
                          {"longest_completion_gap_ns", res.longest_idle_gap},
                          {"conserved", res.conserved},
                          {"coverage_exact", res.coverage_exact}};
    res.report = std::move(rep);
    return res;
  }

  ScenarioConfig cfg_;
  Simulator sim_;
  HostCpu cpu_;
  Nic nic_;
  Session session_;
  TrafficRegulator regulator_;
  MergeEngine engine_;
  std::vector<std::unique_ptr<Poller>> pollers_;
  Trace trace_;
  bool ran_ = false;

  std::vector<ReqInfo> reqs_;
  std::vector<std::uint32_t> covered_;
  std::vector<Actor> actors_;
  std::size_t next_record_ = 0;
  std::vector<std::size_t> bursts_;
  std::size_t next_burst_ = 0;
  std::uint64_t paced_outstanding_ = 0;
  bool burst_issued_ = false;

  SimTime first_arrival_ = kNever;
  SimTime last_completion_ = 0;
  SimTime last_wc_ = kNever;
  SimTime longest_gap_ = 0;
  std::uint64_t completed_bytes_ = 0;
  std::uint64_t window_completions_ = 0;
  std::uint64_t window_bytes_ = 0;
};

inline RunResult run_scenario(const ScenarioConfig& cfg, std::optional<Trace> trace = std::nullopt) {
  Testbed tb(cfg, std::move(trace));
  return tb.run();
}

}  // namespace rdmabox
