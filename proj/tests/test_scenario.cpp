#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rdmabox/harness.hpp"
#include "rdmabox/scenario.hpp"
#include "rdmabox/testbed.hpp"

using namespace rdmabox;

namespace {

const char* kSmallOpen = R"(
run.duration = 5ms
run.warmup = 0ms
run.cpus = 4
session.peers = 2
batching.mode = hybrid
polling.strategy = adaptive
workload.kind = open
workload.source = kv
workload.requests = 2000
kv.keyspace = 4096
kv.block = 4KiB
kv.mean_interarrival = 1us
)";

const char* kSmallClosed = R"(
run.duration = 2ms
run.warmup = 200us
run.cpus = 4
session.peers = 2
polling.strategy = event_batch
admission.window_bytes = 64KiB
admission.fragment_bytes = 4KiB
workload.kind = closed
workload.actors = 6
workload.depth = 4
workload.think = 2us
kv.keyspace = 4096
kv.block = 4KiB
kv.clump = 2
)";

std::string config_error_path(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

}  // namespace

TEST(Config, UnitsScaleValues) {
  auto c = parse_config_string("run.duration = 3ms\nrun.warmup = 7us\nkv.block = 2MiB\nadmission.fragment_bytes = 4KiB\n"
                               "polling.poll_cost = 90ns\n");
  EXPECT_EQ(c.duration, 3'000'000u);
  EXPECT_EQ(c.warmup, 7000u);
  EXPECT_EQ(c.workload.kv.block, 2u << 20);
  EXPECT_EQ(c.fragment_bytes, 4096u);
  EXPECT_EQ(c.poll_cost, 90u);
}

TEST(Config, CommentsAndWhitespace) {
  auto c = parse_config_string("  # header\n\n run.cpus=  3   # trailing\n");
  EXPECT_EQ(c.cpus, 3u);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(config_error_path("run.bogus = 1\n"), "run.bogus");
  EXPECT_EQ(config_error_path("run.cpus = 2\nrun.cpus = 3\n"), "run.cpus");
  EXPECT_EQ(config_error_path("run.cpus = two\n"), "run.cpus");
  EXPECT_EQ(config_error_path("run.duration = 5s\n"), "run.duration");
  EXPECT_EQ(config_error_path("batching.mode = fancy\n"), "batching.mode");
  EXPECT_EQ(config_error_path("no equals sign\n"), "line 1");
  // Range checks on a nested spec report the section; the message names the field.
  try {
    parse_config_string("kv.read_fraction = 1.5\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "kv");
    EXPECT_NE(std::string(e.what()).find("read_fraction"), std::string::npos);
  }
}

TEST(Config, DepthMustCoverClump) {
  EXPECT_EQ(config_error_path("workload.depth = 2\nkv.clump = 4\n"), "workload.depth");
}

TEST(Config, WindowMustHoldLargestRequest) {
  EXPECT_THROW(parse_config_string("admission.window_bytes = 4KiB\nadmission.fragment_bytes = 4KiB\nkv.block = 8KiB\n"),
               ConfigError);
}

TEST(Config, EchoRoundTrips) {
  auto c = parse_config_string(kSmallClosed);
  std::ostringstream doc;
  for (const auto& [k, v] : echo_config(c)) doc << k << " = " << v << '\n';
  auto again = parse_config_string(doc.str());
  EXPECT_EQ(echo_config(again), echo_config(c));
}

TEST(Config, EveryPresetLoads) {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(RDMABOX_PRESET_DIR)) {
    if (e.path().extension() != ".conf") continue;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 6);
}

TEST(Scenario, OpenRunConservesRequests) {
  auto r = run_scenario(parse_config_string(kSmallOpen));
  EXPECT_TRUE(r.conserved);
  EXPECT_TRUE(r.coverage_exact);
  const auto& c = r.report["counters"];
  EXPECT_EQ(c["requests_in"], 2000);
  EXPECT_EQ(c["requests_completed"], 2000);
  EXPECT_GT(r.iops, 0);
  EXPECT_EQ(r.report["gauges"]["in_flight_bytes"]["final"], 0);
}

TEST(Scenario, ClosedRunRespectsWindow) {
  auto r = run_scenario(parse_config_string(kSmallClosed));
  EXPECT_TRUE(r.conserved);
  EXPECT_LE(r.report["derived"]["regulator_max_in_flight"].get<std::uint64_t>(), 64u * 1024);
  EXPECT_LE(r.report["gauges"]["in_flight_bytes"]["max"].get<std::int64_t>(), 64 * 1024);
}

TEST(Scenario, ReportSchema) {
  auto r = run_scenario(parse_config_string(kSmallOpen));
  const auto& rep = r.report;
  EXPECT_EQ(rep["schema"], kReportSchema);
  for (const char* k : {"config", "counters", "gauges", "histograms", "derived"}) {
    EXPECT_TRUE(rep.contains(k)) << k;
  }
  for (const char* k : {metric::kWqePosted, metric::kMmio, metric::kDmaRead, metric::kInterrupts,
                        metric::kContextSwitches, metric::kWcPolled, metric::kMerges, metric::kChains}) {
    EXPECT_TRUE(rep["counters"].contains(k)) << k;
  }
  for (const char* k : {metric::kInFlightBytes, metric::kInFlightOps, metric::kMergeQueueDepth}) {
    EXPECT_TRUE(rep["gauges"][k].contains("series")) << k;
  }
  EXPECT_TRUE(rep["histograms"][metric::kRequestLatency].contains("p99"));
  EXPECT_EQ(rep["config"]["batching.mode"], "hybrid");
}

TEST(Scenario, SameSeedSameReport) {
  auto cfg = parse_config_string(kSmallClosed);
  EXPECT_EQ(run_scenario(cfg).report.dump(), run_scenario(cfg).report.dump());
  auto other = cfg;
  other.seed = 2;
  EXPECT_NE(run_scenario(cfg).report["counters"].dump(), run_scenario(other).report["counters"].dump());
}

TEST(Scenario, ExplicitTraceMatchesGenerated) {
  auto cfg = parse_config_string(kSmallOpen);
  auto a = run_scenario(cfg);
  auto b = run_scenario(cfg, scenario_trace(cfg));
  EXPECT_EQ(a.report.dump(), b.report.dump());
}

TEST(Scenario, TraceFileSource) {
  auto cfg = parse_config_string(kSmallOpen);
  const auto path = std::filesystem::temp_directory_path() / "rdmabox_test_trace.csv";
  save_trace(path.string(), scenario_trace(cfg));
  auto from_file = parse_config_string(std::string(kSmallOpen) + "workload.trace_path = " + path.string() + "\n");
  from_file.workload.source = TraceSource::kFile;
  EXPECT_EQ(run_scenario(from_file).report["counters"].dump(), run_scenario(cfg).report["counters"].dump());
  std::filesystem::remove(path);
}

TEST(Scenario, TraceNodeOutOfRangeIsConfigError) {
  auto cfg = parse_config_string(kSmallOpen);
  Trace t{TraceRecord{0, Direction::kWrite, 5, 0, 4096, 0}};
  EXPECT_THROW(run_scenario(cfg, t), ConfigError);
}

TEST(Scenario, BatchingCutsPostsOnBurstyLoad) {
  auto cfg = parse_config_string(kSmallOpen);
  set_field(cfg, "kv.clump", "8");
  set_field(cfg, "kv.seq_prob", "0.9");
  set_field(cfg, "batching.mode", "single");
  auto single = run_scenario(cfg);
  set_field(cfg, "batching.mode", "hybrid");
  auto hybrid = run_scenario(cfg);
  EXPECT_EQ(single.report["counters"]["wqe_posted"], 2000);
  EXPECT_LT(hybrid.report["counters"]["wqe_posted"].get<std::uint64_t>(), 2000u);
  EXPECT_LT(hybrid.report["counters"]["mmio_count"].get<std::uint64_t>(),
            single.report["counters"]["mmio_count"].get<std::uint64_t>());
}

TEST(Harness, SweepVariesOneAxis) {
  auto cfg = parse_config_string(kSmallOpen);
  auto rs = sweep(cfg, "batching.mode", split_values("single,hybrid"));
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(rs[0].report["config"]["batching.mode"], "single");
  EXPECT_EQ(rs[1].report["config"]["batching.mode"], "hybrid");
  EXPECT_THROW(sweep(cfg, "no.such_axis", {"1"}), ConfigError);
}
