#pragma once

// Experiment drivers on top of Testbed: parameter sweeps, window calibration,
// large-burst calibration, and the human-readable summary table.

#include <cstdint>
#include <cstdio>
#include <future>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rdmabox/scenario.hpp"
#include "rdmabox/testbed.hpp"

namespace rdmabox {

inline std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Scenarios are independent, so the points run on separate host threads.
inline std::vector<RunResult> sweep(const ScenarioConfig& base, const std::string& axis,
                                    const std::vector<std::string>& values, bool parallel = true) {
  const ConfigField* f = find_field(axis);
  if (!f) throw ConfigError(axis, "unknown sweep axis");
  if (f->type == "string") throw ConfigError(axis, "sweep axis must be numeric or enum");
  if (values.empty()) throw ConfigError(axis, "sweep needs at least one value");
  std::vector<ScenarioConfig> cfgs;
  for (const auto& v : values) {
    ScenarioConfig c = base;
    f->set(c, v);
    c.validate();
    cfgs.push_back(std::move(c));
  }
  std::vector<RunResult> out(cfgs.size());
  if (!parallel) {
    for (std::size_t i = 0; i < cfgs.size(); ++i) out[i] = run_scenario(cfgs[i]);
    return out;
  }
  std::vector<std::future<RunResult>> futs;
  for (const auto& c : cfgs) futs.push_back(std::async(std::launch::async, [c] { return run_scenario(c); }));
  for (std::size_t i = 0; i < futs.size(); ++i) out[i] = futs[i].get();
  return out;
}

inline std::string summary_header() {
  return "value          iops     bw_MBps  wqe_posted      mmio  merges  chains  interrupts  ctx_sw  "
         "inflight_ops  io_time_us  p99_lat_us  poller_cpu_ms";
}

inline std::string summary_line(const std::string& label, const RunResult& r) {
  const auto& rep = r.report;
  const auto& c = rep["counters"];
  auto cnt = [&](const char* k) -> std::uint64_t { return c.contains(k) ? c[k].get<std::uint64_t>() : 0; };
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-10s %10.0f %11.1f %11llu %9llu %7llu %7llu %11llu %7llu %13.2f %11.2f %11.2f %14.3f",
                label.c_str(), r.iops, r.bandwidth / 1e6, static_cast<unsigned long long>(cnt("wqe_posted")),
                static_cast<unsigned long long>(cnt("mmio_count")), static_cast<unsigned long long>(cnt("merges")),
                static_cast<unsigned long long>(cnt("chains")), static_cast<unsigned long long>(cnt("interrupts")),
                static_cast<unsigned long long>(cnt("context_switches")),
                rep["gauges"]["in_flight_ops"]["window_mean"].get<double>(),
                rep["histograms"]["io_completion_time"]["mean"].get<double>() / 1e3,
                static_cast<double>(rep["histograms"]["request_latency"]["p99"].get<std::uint64_t>()) / 1e3,
                static_cast<double>(rep["derived"]["poller_cpu_ns"].get<std::uint64_t>()) / 1e6);
  return buf;
}

inline std::string summary_table(const std::string& axis, const std::vector<std::string>& values,
                                 const std::vector<RunResult>& results) {
  std::ostringstream os;
  os << "# axis " << axis << '\n' << summary_header() << '\n';
  for (std::size_t i = 0; i < results.size(); ++i) os << summary_line(values[i], results[i]) << '\n';
  return os.str();
}

inline std::size_t argmax_iops(const std::vector<RunResult>& rs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rs.size(); ++i)
    if (rs[i].iops > rs[best].iops) best = i;
  return best;
}

struct WindowCalibration {
  std::uint64_t window_bytes = 0;
  std::uint32_t peak_actors = 0;
  double peak_iops = 0;
  bool interior_peak = false;
  std::string warning;
  std::vector<RunResult> sweep;
};

// Sweeps the actor count with admission disabled, finds the IOPS peak and
// takes the mean in-flight bytes there as the window (rounded up to the
// fragment size).
inline WindowCalibration calibrate_window(ScenarioConfig cfg, std::uint32_t max_actors = 12) {
  if (cfg.window_bytes != 0) throw ConfigError("admission.window_bytes", "calibration needs admission disabled (0)");
  if (cfg.workload.kind != WorkloadKind::kClosed) throw ConfigError("workload.kind", "calibration needs a closed-loop workload");
  cfg.workload.actors_per_peer = 0;
  std::vector<std::string> values;
  for (std::uint32_t a = 1; a <= std::max<std::uint32_t>(1, max_actors); ++a) values.push_back(std::to_string(a));
  WindowCalibration out;
  out.sweep = sweep(cfg, "workload.actors", values);
  const std::size_t best = argmax_iops(out.sweep);
  out.peak_actors = static_cast<std::uint32_t>(best + 1);
  out.peak_iops = out.sweep[best].iops;
  out.interior_peak = best > 0 && best + 1 < out.sweep.size();
  if (best + 1 == out.sweep.size() && out.sweep.size() > 1) {
    out.warning = "no interior IOPS peak; using in-flight bytes at the largest actor count";
  }
  const double mean = out.sweep[best].report["gauges"]["in_flight_bytes"]["window_mean"].get<double>();
  const std::uint64_t raw = static_cast<std::uint64_t>(std::llround(mean));
  const std::uint64_t frag = cfg.fragment_bytes;
  out.window_bytes = std::max<std::uint64_t>(frag, ceil_div(std::max<std::uint64_t>(raw, 1), frag) * frag);
  out.window_bytes = std::max(out.window_bytes, ceil_div(cfg.max_request_len(), frag) * frag);
  return out;
}

struct ClusterCalibration {
  std::uint32_t large = 1;
  bool capped = false;
  std::vector<double> bandwidth;  // index k-1 -> cluster size k
};

// Smallest cluster size K at which busy polling's delivered bandwidth stops
// increasing: growing the cluster to K+1 gains less than `epsilon`.
inline ClusterCalibration calibrate_large_cluster(ScenarioConfig cfg, std::uint32_t cap = 64, double epsilon = 0.02) {
  cfg.polling = PollingStrategy::busy();
  cfg.workload.kind = WorkloadKind::kPaced;
  cfg.workload.source = TraceSource::kBurst;
  cfg.validate();
  ClusterCalibration out;
  std::vector<std::string> values;
  for (std::uint32_t k = 1; k <= cap; ++k) values.push_back(std::to_string(k));
  auto rs = sweep(cfg, "burst.cluster_size", values);
  for (const auto& r : rs) out.bandwidth.push_back(r.bandwidth);
  out.large = cap;
  out.capped = true;
  for (std::uint32_t k = 1; k < cap; ++k) {
    if (out.bandwidth[k] < out.bandwidth[k - 1] * (1.0 + epsilon)) {
      out.large = k;
      out.capped = false;
      break;
    }
  }
  return out;
}

}  // namespace rdmabox
