#pragma once

// Scenario configuration: one flat, typed key=value document covering every
// module. Each key is bound to a field of ScenarioConfig through a small
// registry, which also drives sweeps (set by name) and the report echo.

#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdmabox/admission.hpp"
#include "rdmabox/batching.hpp"
#include "rdmabox/nic_model.hpp"
#include "rdmabox/polling.hpp"
#include "rdmabox/session.hpp"
#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/workload.hpp"

namespace rdmabox {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class WorkloadKind : std::uint8_t { kClosed, kOpen, kPaced };
enum class TraceSource : std::uint8_t { kKv, kBurst, kFile };

struct WorkloadConfig {
  WorkloadKind kind = WorkloadKind::kClosed;
  TraceSource source = TraceSource::kKv;
  // Closed loop: each actor thinks, issues kv.clump requests, and keeps at
  // most `depth` of its own requests outstanding.
  std::uint32_t actors = 4;
  std::uint32_t actors_per_peer = 0;  // > 0 overrides `actors` and pins actor i to node i % peers
  std::uint32_t depth = 16;
  SimTime think = 6_us;
  bool think_exponential = false;  // draw each think time from an exponential with mean `think`
  // Open / paced replay.
  std::uint64_t requests = 10000;
  std::string trace_path;
  SimTime barrier_gap = 1_us;  // paced: a gap this long waits for every earlier request
  MixSpec kv;
  BurstSpec burst;

  std::uint32_t effective_actors(std::uint16_t peers) const {
    return actors_per_peer > 0 ? actors_per_peer * peers : actors;
  }
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  SimTime duration = 20_ms;  // closed loop: actors stop issuing here
  SimTime warmup = 2_ms;     // closed loop: start of the measurement window
  std::uint32_t cpus = 8;
  SimTime sample_interval = 100_us;

  NicConfig nic;
  SessionConfig session;
  BatchPolicy batching;
  std::size_t queue_capacity = 1u << 20;
  std::uint64_t window_bytes = 0;
  std::uint64_t fragment_bytes = 128_KiB;
  PollingStrategy polling;
  SimTime poll_cost = 80;
  SimTime handle_cost = 300;
  WorkloadConfig workload;

  PollCosts poll_costs() const {
    return PollCosts{poll_cost, handle_cost, nic.interrupt_cost, nic.context_switch_cost};
  }

  // Largest single request the workload can produce (0 when unknown until a
  // trace file is read).
  std::uint64_t max_request_len() const {
    if (workload.kind == WorkloadKind::kClosed) return workload.kv.block;
    switch (workload.source) {
      case TraceSource::kKv: return workload.kv.block;
      case TraceSource::kBurst: return workload.burst.req_len;
      case TraceSource::kFile: return 0;
    }
    return 0;
  }

  void validate() const;
};

// ---------------------------------------------------------------------------
// Field registry

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Unsigned integer with optional unit suffix: ns/us/ms for times, KiB/MiB for
// sizes. Suffixes are accepted on any integer field.
inline std::uint64_t parse_uint(const std::string& path, const std::string& raw) {
  static const std::vector<std::pair<std::string, std::uint64_t>> units = {
      {"KiB", 1024}, {"MiB", 1024 * 1024}, {"ns", 1}, {"us", 1000}, {"ms", 1000 * 1000}};
  std::string s = trim(raw);
  std::uint64_t mult = 1;
  for (const auto& [suf, m] : units) {
    if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      mult = m;
      s = trim(s.substr(0, s.size() - suf.size()));
      break;
    }
  }
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(path, "expected an unsigned integer, got '" + raw + "'");
  }
  std::uint64_t v;
  try {
    v = std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(path, "integer out of range '" + raw + "'");
  }
  if (mult != 1 && v > ~0ull / mult) throw ConfigError(path, "integer out of range '" + raw + "'");
  return v * mult;
}

inline double parse_double(const std::string& path, const std::string& raw) {
  std::string s = trim(raw);
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError(path, "expected a number, got '" + raw + "'");
  }
  if (pos != s.size()) throw ConfigError(path, "expected a number, got '" + raw + "'");
  return v;
}

inline bool parse_bool(const std::string& path, const std::string& raw) {
  std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError(path, "expected true/false, got '" + raw + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

struct ConfigField {
  std::string name;
  std::string type;  // uint, float, bool, enum, string
  std::vector<std::string> choices;
  std::function<void(ScenarioConfig&, const std::string&)> set;
  std::function<std::string(const ScenarioConfig&)> get;
};

namespace detail {

template <typename T, typename Ref>
ConfigField uint_field(std::string name, Ref ref) {
  ConfigField f;
  f.name = name;
  f.type = "uint";
  f.set = [ref, name](ScenarioConfig& c, const std::string& v) {
    std::uint64_t x = parse_uint(name, v);
    if (x > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) {
      throw ConfigError(name, "value " + v + " does not fit");
    }
    ref(c) = static_cast<T>(x);
  };
  f.get = [ref](const ScenarioConfig& c) {
    return std::to_string(ref(const_cast<ScenarioConfig&>(c)));
  };
  return f;
}

template <typename Ref>
ConfigField float_field(std::string name, Ref ref) {
  ConfigField f;
  f.name = name;
  f.type = "float";
  f.set = [ref, name](ScenarioConfig& c, const std::string& v) { ref(c) = parse_double(name, v); };
  f.get = [ref](const ScenarioConfig& c) { return format_double(ref(const_cast<ScenarioConfig&>(c))); };
  return f;
}

template <typename Ref>
ConfigField bool_field(std::string name, Ref ref) {
  ConfigField f;
  f.name = name;
  f.type = "bool";
  f.set = [ref, name](ScenarioConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); };
  f.get = [ref](const ScenarioConfig& c) { return std::string(ref(const_cast<ScenarioConfig&>(c)) ? "true" : "false"); };
  return f;
}

template <typename E, typename Ref>
ConfigField enum_field(std::string name, Ref ref, std::vector<std::pair<std::string, E>> table) {
  ConfigField f;
  f.name = name;
  f.type = "enum";
  for (const auto& [s, _] : table) f.choices.push_back(s);
  f.set = [ref, name, table](ScenarioConfig& c, const std::string& raw) {
    std::string v = trim(raw);
    for (const auto& [s, e] : table) {
      if (s == v) {
        ref(c) = e;
        return;
      }
    }
    std::string all;
    for (const auto& [s, _] : table) all += (all.empty() ? "" : "|") + s;
    throw ConfigError(name, "expected one of " + all + ", got '" + raw + "'");
  };
  f.get = [ref, table](const ScenarioConfig& c) {
    E cur = ref(const_cast<ScenarioConfig&>(c));
    for (const auto& [s, e] : table)
      if (e == cur) return s;
    return std::string("?");
  };
  return f;
}

}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
  using namespace detail;
  using C = ScenarioConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> v;
    v.push_back(uint_field<std::uint64_t>("run.seed", [](C& c) -> auto& { return c.seed; }));
    v.push_back(uint_field<SimTime>("run.duration", [](C& c) -> auto& { return c.duration; }));
    v.push_back(uint_field<SimTime>("run.warmup", [](C& c) -> auto& { return c.warmup; }));
    v.push_back(uint_field<std::uint32_t>("run.cpus", [](C& c) -> auto& { return c.cpus; }));
    v.push_back(uint_field<SimTime>("run.sample_interval", [](C& c) -> auto& { return c.sample_interval; }));

    v.push_back(uint_field<std::uint32_t>("nic.wqe_cache_slots", [](C& c) -> auto& { return c.nic.wqe_cache_slots; }));
    v.push_back(uint_field<std::uint32_t>("nic.qp_cache_slots", [](C& c) -> auto& { return c.nic.qp_cache_slots; }));
    v.push_back(uint_field<std::uint32_t>("nic.mpt_cache_slots", [](C& c) -> auto& { return c.nic.mpt_cache_slots; }));
    v.push_back(uint_field<SimTime>("nic.mmio_cost", [](C& c) -> auto& { return c.nic.mmio_cost; }));
    v.push_back(uint_field<SimTime>("nic.dma_read_cost", [](C& c) -> auto& { return c.nic.dma_read_cost; }));
    v.push_back(uint_field<SimTime>("nic.cache_miss_refetch_cost", [](C& c) -> auto& { return c.nic.cache_miss_refetch_cost; }));
    v.push_back(uint_field<SimTime>("nic.per_wqe_process_cost", [](C& c) -> auto& { return c.nic.per_wqe_process_cost; }));
    v.push_back(uint_field<std::uint64_t>("nic.wire_ps_per_byte", [](C& c) -> auto& { return c.nic.wire_ps_per_byte; }));
    v.push_back(uint_field<SimTime>("nic.interrupt_cost", [](C& c) -> auto& { return c.nic.interrupt_cost; }));
    v.push_back(uint_field<SimTime>("nic.context_switch_cost", [](C& c) -> auto& { return c.nic.context_switch_cost; }));

    v.push_back(uint_field<SimTime>("mr.kernel_reg_base", [](C& c) -> auto& { return c.session.mr_costs.kernel_reg_base; }));
    v.push_back(uint_field<SimTime>("mr.kernel_reg_per_page", [](C& c) -> auto& { return c.session.mr_costs.kernel_reg_per_page; }));
    v.push_back(uint_field<SimTime>("mr.user_reg_base", [](C& c) -> auto& { return c.session.mr_costs.user_reg_base; }));
    v.push_back(uint_field<SimTime>("mr.user_reg_per_page", [](C& c) -> auto& { return c.session.mr_costs.user_reg_per_page; }));
    v.push_back(uint_field<std::uint64_t>("mr.memcpy_ps_per_byte", [](C& c) -> auto& { return c.session.mr_costs.memcpy_ps_per_byte; }));

    v.push_back(uint_field<std::uint16_t>("session.peers", [](C& c) -> auto& { return c.session.peers; }));
    v.push_back(uint_field<std::uint32_t>("session.qps_per_node", [](C& c) -> auto& { return c.session.qps_per_node; }));
    v.push_back(uint_field<std::uint32_t>("session.send_queue_depth", [](C& c) -> auto& { return c.session.send_queue_depth; }));
    v.push_back(enum_field<AddressSpace>("session.space", [](C& c) -> auto& { return c.session.space; },
                                         {{"kernel", AddressSpace::kKernel}, {"user", AddressSpace::kUser}}));
    v.push_back(uint_field<std::uint64_t>("session.pool_slot_size", [](C& c) -> auto& { return c.session.pool_slot_size; }));
    v.push_back(uint_field<std::uint32_t>("session.pool_slots", [](C& c) -> auto& { return c.session.pool_slots; }));

    v.push_back(enum_field<BatchMode>("batching.mode", [](C& c) -> auto& { return c.batching.mode; },
                                      {{"single", BatchMode::kSingle}, {"merge", BatchMode::kMerge},
                                       {"doorbell", BatchMode::kDoorbell}, {"hybrid", BatchMode::kHybrid}}));
    v.push_back(enum_field<MrStrategy>("batching.mr", [](C& c) -> auto& { return c.batching.mr_strategy; },
                                       {{"auto", MrStrategy::kAuto}, {"pre", MrStrategy::kForcePre},
                                        {"dyn", MrStrategy::kForceDyn}}));
    v.push_back(uint_field<std::uint32_t>("batching.max_chaining_size", [](C& c) -> auto& { return c.batching.max_chaining_size; }));
    v.push_back(uint_field<std::uint64_t>("batching.auto_threshold", [](C& c) -> auto& { return c.batching.auto_threshold; }));
    v.push_back(uint_field<std::uint64_t>("batching.max_merged_bytes", [](C& c) -> auto& { return c.batching.max_merged_bytes; }));
    v.push_back(uint_field<SimTime>("batching.merge_check_cost", [](C& c) -> auto& { return c.batching.merge_check_cost; }));
    v.push_back(uint_field<std::size_t>("batching.queue_capacity", [](C& c) -> auto& { return c.queue_capacity; }));

    v.push_back(uint_field<std::uint64_t>("admission.window_bytes", [](C& c) -> auto& { return c.window_bytes; }));
    v.push_back(uint_field<std::uint64_t>("admission.fragment_bytes", [](C& c) -> auto& { return c.fragment_bytes; }));

    v.push_back(enum_field<PollingKind>("polling.strategy", [](C& c) -> auto& { return c.polling.kind; },
                                        {{"event", PollingKind::kEventTriggered}, {"busy", PollingKind::kBusy},
                                         {"event_batch", PollingKind::kEventBatch}, {"hybrid", PollingKind::kHybrid},
                                         {"shared_cq", PollingKind::kSharedCq}, {"adaptive", PollingKind::kAdaptive}}));
    v.push_back(uint_field<std::uint32_t>("polling.budget", [](C& c) -> auto& { return c.polling.budget; }));
    v.push_back(uint_field<std::uint32_t>("polling.shared_cqs", [](C& c) -> auto& { return c.polling.shared_cqs; }));
    v.push_back(uint_field<std::uint32_t>("polling.max_poll_wc", [](C& c) -> auto& { return c.polling.max_poll_wc; }));
    v.push_back(uint_field<std::uint32_t>("polling.max_retry", [](C& c) -> auto& { return c.polling.max_retry; }));
    v.push_back(bool_field("polling.reset_retry_on_success", [](C& c) -> auto& { return c.polling.reset_retry_on_success; }));
    v.push_back(uint_field<SimTime>("polling.poll_cost", [](C& c) -> auto& { return c.poll_cost; }));
    v.push_back(uint_field<SimTime>("polling.handle_cost", [](C& c) -> auto& { return c.handle_cost; }));

    v.push_back(enum_field<WorkloadKind>("workload.kind", [](C& c) -> auto& { return c.workload.kind; },
                                         {{"closed", WorkloadKind::kClosed}, {"open", WorkloadKind::kOpen},
                                          {"paced", WorkloadKind::kPaced}}));
    v.push_back(enum_field<TraceSource>("workload.source", [](C& c) -> auto& { return c.workload.source; },
                                        {{"kv", TraceSource::kKv}, {"burst", TraceSource::kBurst},
                                         {"file", TraceSource::kFile}}));
    v.push_back(uint_field<std::uint32_t>("workload.actors", [](C& c) -> auto& { return c.workload.actors; }));
    v.push_back(uint_field<std::uint32_t>("workload.actors_per_peer", [](C& c) -> auto& { return c.workload.actors_per_peer; }));
    v.push_back(uint_field<std::uint32_t>("workload.depth", [](C& c) -> auto& { return c.workload.depth; }));
    v.push_back(uint_field<SimTime>("workload.think", [](C& c) -> auto& { return c.workload.think; }));
    v.push_back(bool_field("workload.think_exponential", [](C& c) -> auto& { return c.workload.think_exponential; }));
    v.push_back(uint_field<std::uint64_t>("workload.requests", [](C& c) -> auto& { return c.workload.requests; }));
    {
      ConfigField f;
      f.name = "workload.trace_path";
      f.type = "string";
      f.set = [](C& c, const std::string& s) { c.workload.trace_path = trim(s); };
      f.get = [](const C& c) { return c.workload.trace_path; };
      v.push_back(f);
    }
    v.push_back(uint_field<SimTime>("workload.barrier_gap", [](C& c) -> auto& { return c.workload.barrier_gap; }));

    v.push_back(float_field("kv.read_fraction", [](C& c) -> auto& { return c.workload.kv.read_fraction; }));
    v.push_back(float_field("kv.zipf_theta", [](C& c) -> auto& { return c.workload.kv.zipf_theta; }));
    v.push_back(uint_field<std::uint64_t>("kv.keyspace", [](C& c) -> auto& { return c.workload.kv.keyspace; }));
    v.push_back(float_field("kv.seq_prob", [](C& c) -> auto& { return c.workload.kv.seq_prob; }));
    v.push_back(uint_field<std::uint64_t>("kv.block", [](C& c) -> auto& { return c.workload.kv.block; }));
    v.push_back(uint_field<SimTime>("kv.mean_interarrival", [](C& c) -> auto& { return c.workload.kv.mean_interarrival; }));
    v.push_back(uint_field<std::uint32_t>("kv.clump", [](C& c) -> auto& { return c.workload.kv.clump; }));

    v.push_back(uint_field<std::uint32_t>("burst.cluster_size", [](C& c) -> auto& { return c.workload.burst.cluster_size; }));
    v.push_back(uint_field<SimTime>("burst.inter_gap", [](C& c) -> auto& { return c.workload.burst.inter_burst_gap; }));
    v.push_back(uint_field<SimTime>("burst.intra_gap", [](C& c) -> auto& { return c.workload.burst.intra_burst_gap; }));
    v.push_back(uint_field<std::uint64_t>("burst.total", [](C& c) -> auto& { return c.workload.burst.total_requests; }));
    v.push_back(uint_field<std::uint64_t>("burst.req_len", [](C& c) -> auto& { return c.workload.burst.req_len; }));
    v.push_back(uint_field<std::uint64_t>("burst.keyspace", [](C& c) -> auto& { return c.workload.burst.keyspace; }));
    return v;
  }();
  return fields;
}

inline const ConfigField* find_field(const std::string& name) {
  for (const auto& f : config_fields())
    if (f.name == name) return &f;
  return nullptr;
}

inline void set_field(ScenarioConfig& c, const std::string& name, const std::string& value) {
  const ConfigField* f = find_field(name);
  if (!f) throw ConfigError(name, "unknown key");
  f->set(c, value);
}

inline std::string get_field(const ScenarioConfig& c, const std::string& name) {
  const ConfigField* f = find_field(name);
  if (!f) throw ConfigError(name, "unknown key");
  return f->get(c);
}

// Ordered (name, value) pairs for every field.
inline std::vector<std::pair<std::string, std::string>> echo_config(const ScenarioConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : config_fields()) out.emplace_back(f.name, f.get(c));
  return out;
}

inline void ScenarioConfig::validate() const {
  auto check = [](bool ok, const char* path, const std::string& what) {
    if (!ok) throw ConfigError(path, what);
  };
  auto wrap = [](const char* path, const auto& fn) {
    try {
      fn();
    } catch (const ContractViolation& e) {
      throw ConfigError(path, e.what());
    }
  };
  wrap("nic", [&] { nic.validate(); });
  wrap("batching", [&] { batching.validate(); });
  wrap("polling", [&] { polling.validate(); });
  check(cpus >= 1, "run.cpus", "must be >= 1");
  check(sample_interval > 0, "run.sample_interval", "must be positive");
  check(session.peers >= 1, "session.peers", "must be >= 1");
  check(session.qps_per_node >= 1, "session.qps_per_node", "must be >= 1");
  check(session.send_queue_depth >= batching.max_chaining_size, "session.send_queue_depth",
        "must hold at least one full chain");
  check(session.pool_slot_size > 0 && session.pool_slots >= 1, "session.pool_slots", "pool needs at least one slot");
  check(queue_capacity >= 1, "batching.queue_capacity", "must be >= 1");
  check(fragment_bytes > 0, "admission.fragment_bytes", "must be positive");
  if (polling.kind == PollingKind::kSharedCq) {
    check(polling.shared_cqs <= std::uint64_t{session.peers} * session.qps_per_node, "polling.shared_cqs",
          "more shared CQs than queue pairs");
  }
  const std::uint64_t max_len = max_request_len();
  if (window_bytes > 0) {
    check(window_bytes >= fragment_bytes, "admission.window_bytes", "smaller than admission.fragment_bytes");
    const std::uint64_t need = ceil_div(max_len, fragment_bytes) * fragment_bytes;
    check(need <= window_bytes, "admission.window_bytes",
          "a single request (" + std::to_string(max_len) + " bytes) exceeds the window");
  }
  if (batching.choose_mr(session.space, max_len) == MrKind::kPreRegistered || batching.mr_strategy == MrStrategy::kForcePre) {
    check(max_len <= session.pool_slot_size * session.pool_slots, "session.pool_slots",
          "pool smaller than one request");
  }
  const auto& w = workload;
  if (w.kind == WorkloadKind::kClosed) {
    check(w.effective_actors(session.peers) >= 1, "workload.actors", "must be >= 1");
    check(w.depth >= 1, "workload.depth", "must be >= 1");
    check(w.depth >= w.kv.clump, "workload.depth", "must be >= kv.clump");
    check(warmup < duration, "run.warmup", "must be shorter than run.duration");
    wrap("kv", [&] { w.kv.validate(); });
  } else {
    switch (w.source) {
      case TraceSource::kKv:
        check(w.requests >= 1, "workload.requests", "must be >= 1");
        wrap("kv", [&] { w.kv.validate(); });
        check(w.kv.keyspace >= session.peers, "kv.keyspace", "fewer slots than peers");
        break;
      case TraceSource::kBurst:
        wrap("burst", [&] { w.burst.validate(); });
        break;
      case TraceSource::kFile:
        check(!w.trace_path.empty(), "workload.trace_path", "required when workload.source = file");
        break;
    }
  }
}

// Applies a flat key=value document on top of `base`. '#' starts a comment.
inline ScenarioConfig parse_config(std::istream& is, ScenarioConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    }
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    const ConfigField* f = find_field(key);
    if (!f) throw ConfigError(key, "unknown key (line " + std::to_string(lineno) + ")");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(key, "duplicate key (lines " + std::to_string(it->second) + " and " +
                                 std::to_string(lineno) + ")");
    }
    seen[key] = lineno;
    f->set(base, value);
  }
  base.validate();
  return base;
}

inline ScenarioConfig parse_config_string(const std::string& text, ScenarioConfig base = {}) {
  std::istringstream is(text);
  return parse_config(is, std::move(base));
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path, "cannot open config file");
  return parse_config(is);
}

}  // namespace rdmabox
