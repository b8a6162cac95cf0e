// rdmabox: scenario runner.
//
//   rdmabox run --config fig1.conf [--seed N] [--out report.json]
//   rdmabox sweep --config fig1.conf --axis workload.actors --values 1,2,4
//   rdmabox calibrate-window --config fig7.conf
//   rdmabox gen-trace --preset etc|sys|small|medium|large --out t.trace

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "rdmabox/rdmabox.hpp"

using namespace rdmabox;

namespace {

constexpr int kValidationError = 2;

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  ScenarioConfig cfg = load_config(config);
  if (seed) {
    cfg.seed = *seed;
    cfg.validate();
  }
  RunResult r = run_scenario(cfg);
  std::cerr << summary_header() << '\n' << summary_line("run", r) << '\n';
  if (!out.empty()) write_json(r.report, out);
  else std::cout << r.report.dump(2) << '\n';
  return r.conserved && r.coverage_exact ? 0 : 1;
}

int cmd_sweep(const std::string& config, const std::string& axis, const std::string& values, const std::string& out) {
  ScenarioConfig cfg = load_config(config);
  auto vals = split_values(values);
  auto rs = sweep(cfg, axis, vals);
  std::cout << summary_table(axis, vals, rs);
  if (!out.empty()) {
    nlohmann::json all = nlohmann::json::array();
    for (std::size_t i = 0; i < rs.size(); ++i) all.push_back({{"axis", axis}, {"value", vals[i]}, {"report", rs[i].report}});
    write_json(all, out);
  }
  return 0;
}

int cmd_calibrate(const std::string& config, std::uint32_t max_actors) {
  ScenarioConfig cfg = load_config(config);
  cfg.window_bytes = 0;
  auto cal = calibrate_window(cfg, max_actors);
  std::vector<std::string> vals;
  for (std::uint32_t a = 1; a <= cal.sweep.size(); ++a) vals.push_back(std::to_string(a));
  std::cerr << summary_table("workload.actors", vals, cal.sweep);
  if (!cal.warning.empty()) std::cerr << "warning: " << cal.warning << '\n';
  std::cerr << "peak at " << cal.peak_actors << " actors, " << static_cast<long long>(cal.peak_iops) << " IOPS\n";
  std::cout << cal.window_bytes << '\n';
  return 0;
}

int cmd_gen_trace(const std::string& preset, const std::string& out, std::uint64_t seed, std::uint64_t n,
                  const std::string& config, std::uint32_t large) {
  Trace t;
  if (preset == "etc" || preset == "sys") {
    MixSpec m = preset == "etc" ? MixSpec::etc() : MixSpec::sys();
    t = gen_kv(m, n, seed);
  } else {
    if (large == 0) {
      ScenarioConfig cfg = config.empty() ? ScenarioConfig{} : load_config(config);
      auto cal = calibrate_large_cluster(cfg);
      large = cal.large;
      std::cerr << "large cluster size " << large << (cal.capped ? " (capped)" : "") << '\n';
    }
    BurstSpec b = burst_preset(preset, large);
    b.total_requests = n;
    t = gen_burst(b, seed);
  }
  if (out.empty() || out == "-") write_trace(std::cout, t);
  else save_trace(out, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RDMA I/O batching, admission and polling simulator"};
  app.require_subcommand(1);

  std::string config, out, axis, values, preset;
  std::optional<std::uint64_t> seed;
  std::uint64_t trace_seed = 1, trace_n = 100000;
  std::uint32_t max_actors = 12, large = 0;

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("--config", config, "scenario file")->required();
  run->add_option("--seed", seed, "override run.seed");
  run->add_option("--out", out, "report path (default stdout)");

  auto* sw = app.add_subcommand("sweep", "run a scenario once per axis value");
  sw->add_option("--config", config, "scenario file")->required();
  sw->add_option("--axis", axis, "config key to vary")->required();
  sw->add_option("--values", values, "comma-separated values")->required();
  sw->add_option("--out", out, "combined report path");

  auto* cal = app.add_subcommand("calibrate-window", "derive the admission window from an actor sweep");
  cal->add_option("--config", config, "scenario file")->required();
  cal->add_option("--max-actors", max_actors, "sweep 1..N actors");

  auto* gen = app.add_subcommand("gen-trace", "write a workload trace");
  gen->add_option("--preset", preset, "etc|sys|small|medium|large")
      ->required()
      ->check(CLI::IsMember({"etc", "sys", "small", "medium", "large"}));
  gen->add_option("--out", out, "trace path (default stdout)");
  gen->add_option("--seed", trace_seed, "generator seed");
  gen->add_option("--requests", trace_n, "number of records");
  gen->add_option("--config", config, "scenario used to calibrate the large cluster size");
  gen->add_option("--large-cluster", large, "skip calibration and use this large cluster size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kValidationError;
  }

  try {
    if (*run) return cmd_run(config, seed, out);
    if (*sw) return cmd_sweep(config, axis, values, out);
    if (*cal) return cmd_calibrate(config, max_actors);
    if (*gen) return cmd_gen_trace(preset, out, trace_seed, trace_n, config, large);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kValidationError;
  } catch (const TraceParseError& e) {
    std::cerr << "trace error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
