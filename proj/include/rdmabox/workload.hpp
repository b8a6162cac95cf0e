#pragma once

// Trace generation (burst patterns and Zipfian key-value mixes) and the
// line-oriented trace file format.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/verbs.hpp"

namespace rdmabox {

struct TraceRecord {
  SimTime arrive_at = 0;
  Direction direction = Direction::kWrite;
  std::uint16_t node = 0;
  std::uint64_t remote_addr = 0;
  std::uint64_t len = 0;
  ActorId actor = 0;

  bool operator==(const TraceRecord&) const = default;
};

using Trace = std::vector<TraceRecord>;

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : std::runtime_error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr const char* kTraceHeader = "#rdmabox-trace v1";

inline std::string format_record(const TraceRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%" PRIu64 ",%c,%u,0x%" PRIx64 ",%" PRIu64 ",%u", r.arrive_at,
                r.direction == Direction::kRead ? 'R' : 'W', unsigned{r.node}, r.remote_addr, r.len,
                unsigned{r.actor});
  return buf;
}

inline void write_trace(std::ostream& os, const Trace& t) {
  os << kTraceHeader << '\n';
  for (const auto& r : t) os << format_record(r) << '\n';
}

inline void save_trace(const std::string& path, const Trace& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_trace(os, t);
}

namespace detail {

inline std::uint64_t parse_u64(const std::string& s, int base, std::size_t line, const char* field) {
  if (s.empty()) throw TraceParseError(line, std::string("empty ") + field);
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    if (s[0] == '-' || s[0] == '+' || s[0] == ' ') throw std::invalid_argument(field);
    v = std::stoull(s, &pos, base);
  } catch (const std::exception&) {
    throw TraceParseError(line, std::string("bad ") + field + " '" + s + "'");
  }
  if (pos != s.size()) throw TraceParseError(line, std::string("bad ") + field + " '" + s + "'");
  return v;
}

}  // namespace detail

inline Trace read_trace(std::istream& is) {
  Trace out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line == kTraceHeader) continue;
    if (line.empty() && is.peek() == std::char_traits<char>::eof()) break;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw TraceParseError(lineno, "expected 6 comma-separated fields");
    TraceRecord r;
    r.arrive_at = detail::parse_u64(f[0], 10, lineno, "arrive_at_ns");
    if (f[1] == "R") {
      r.direction = Direction::kRead;
    } else if (f[1] == "W") {
      r.direction = Direction::kWrite;
    } else {
      throw TraceParseError(lineno, "direction must be R or W");
    }
    std::uint64_t node = detail::parse_u64(f[2], 10, lineno, "node");
    if (node > 0xffff) throw TraceParseError(lineno, "node out of range");
    r.node = static_cast<std::uint16_t>(node);
    if (f[3].size() < 3 || f[3][0] != '0' || (f[3][1] != 'x' && f[3][1] != 'X')) {
      throw TraceParseError(lineno, "remote_addr must be 0x-prefixed hex");
    }
    r.remote_addr = detail::parse_u64(f[3].substr(2), 16, lineno, "remote_addr");
    r.len = detail::parse_u64(f[4], 10, lineno, "len");
    if (r.len == 0) throw TraceParseError(lineno, "len must be positive");
    std::uint64_t actor = detail::parse_u64(f[5], 10, lineno, "actor");
    if (actor > 0xffffffffull) throw TraceParseError(lineno, "actor out of range");
    r.actor = static_cast<ActorId>(actor);
    if (!out.empty() && r.arrive_at < out.back().arrive_at) {
      throw TraceParseError(lineno, "timestamps must be non-decreasing");
    }
    out.push_back(r);
  }
  return out;
}

inline Trace load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_trace(is);
}

// ---------------------------------------------------------------------------
// Burst patterns

struct BurstSpec {
  std::uint32_t cluster_size = 1;
  SimTime inter_burst_gap = 4_us;
  SimTime intra_burst_gap = 0;
  std::uint64_t total_requests = 4096;
  std::uint64_t req_len = 8_KiB;
  std::uint16_t nodes = 1;
  std::uint32_t actors = 1;
  std::uint64_t keyspace = 1u << 16;  // block-sized slots per node

  void validate() const {
    require(cluster_size >= 1, "burst: cluster_size must be >= 1");
    require(total_requests >= 1 && req_len > 0 && nodes >= 1 && actors >= 1 && keyspace >= 1,
            "burst: counts must be positive");
  }
};

// Bursts of `cluster_size` requests, `intra_burst_gap` apart, separated by
// `inter_burst_gap`. Timestamps are nominal; a paced replay waits for each
// burst to finish before starting the gap.
inline Trace gen_burst(const BurstSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> slot(0, spec.keyspace - 1);
  Trace t;
  t.reserve(spec.total_requests);
  SimTime now = 0;
  std::uint64_t emitted = 0;
  std::uint64_t burst = 0;
  while (emitted < spec.total_requests) {
    if (burst > 0) now += spec.inter_burst_gap;
    for (std::uint32_t i = 0; i < spec.cluster_size && emitted < spec.total_requests; ++i, ++emitted) {
      if (i > 0) now += spec.intra_burst_gap;
      TraceRecord r;
      r.arrive_at = now;
      r.direction = Direction::kWrite;
      r.node = static_cast<std::uint16_t>(emitted % spec.nodes);
      r.remote_addr = slot(rng) * spec.req_len;
      r.len = spec.req_len;
      r.actor = static_cast<ActorId>(burst % spec.actors);
      t.push_back(r);
    }
    ++burst;
  }
  return t;
}

inline std::uint32_t medium_cluster_size(std::uint32_t large) { return (1 + large + 1) / 2; }

inline BurstSpec burst_preset(const std::string& name, std::uint32_t large_cluster) {
  BurstSpec s;
  if (name == "small") {
    s.cluster_size = 1;
  } else if (name == "medium") {
    s.cluster_size = medium_cluster_size(large_cluster);
  } else if (name == "large") {
    s.cluster_size = large_cluster;
  } else {
    throw std::invalid_argument("unknown burst preset '" + name + "'");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Zipfian key-value mixes

class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double theta) : cdf_(n) {
    require(n >= 1, "zipf: n must be >= 1");
    double sum = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      sum += 1.0 / std::pow(static_cast<double>(i + 1), theta);
      cdf_[i] = sum;
    }
    for (auto& c : cdf_) c /= sum;
    cdf_.back() = 1.0;
  }

  // Rank in [0, n); rank 0 is the hottest.
  template <typename Rng>
  std::uint64_t operator()(Rng& rng) const {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<std::uint64_t>(it - cdf_.begin());
  }

  std::uint64_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

struct MixSpec {
  double read_fraction = 0.95;
  double zipf_theta = 0.99;
  std::uint64_t keyspace = 1u << 16;  // block-sized slots across all nodes
  std::uint16_t nodes = 1;
  double seq_prob = 0.3;              // chance the next access continues the previous one
  std::uint64_t block = 128_KiB;
  SimTime mean_interarrival = 2_us;   // exponential, between clumps; 0 puts every record at t=0
  std::uint32_t clump = 1;            // records sharing one arrival instant
  std::uint32_t actors = 8;

  static MixSpec etc() { return MixSpec{}; }
  static MixSpec sys() {
    MixSpec m;
    m.read_fraction = 0.75;
    return m;
  }

  void validate() const {
    require(read_fraction >= 0.0 && read_fraction <= 1.0, "mix: read_fraction must be in [0,1]");
    require(seq_prob >= 0.0 && seq_prob <= 1.0, "mix: seq_prob must be in [0,1]");
    require(zipf_theta >= 0.0, "mix: zipf_theta must be >= 0");
    require(keyspace >= nodes && nodes >= 1 && block > 0 && actors >= 1 && clump >= 1, "mix: bad sizes");
  }
};

// Unbounded record stream for a mix. Several streams may share one sampler.
class KvStream {
 public:
  KvStream(const MixSpec& mix, std::uint64_t seed, std::shared_ptr<const ZipfSampler> zipf = nullptr)
      : mix_(mix), rng_(seed), zipf_(std::move(zipf)),
        gap_(mix.mean_interarrival > 0 ? 1.0 / static_cast<double>(mix.mean_interarrival) : 1.0),
        per_node_(ceil_div(mix.keyspace, mix.nodes)) {
    mix_.validate();
    if (!zipf_) zipf_ = std::make_shared<const ZipfSampler>(mix.keyspace, mix.zipf_theta);
    require(zipf_->size() == mix.keyspace, "zipf sampler does not match the keyspace");
  }

  TraceRecord next() {
    if (count_ > 0 && count_ % mix_.clump == 0 && mix_.mean_interarrival > 0) {
      now_ += static_cast<SimTime>(std::llround(gap_(rng_)));
    }
    std::uint64_t slot;
    Direction dir;
    if (count_ > 0 && prev_slot_ + 1 < mix_.keyspace && coin_(rng_) < mix_.seq_prob) {
      slot = prev_slot_ + 1;
      dir = prev_dir_;
    } else {
      dir = coin_(rng_) < mix_.read_fraction ? Direction::kRead : Direction::kWrite;
      slot = (*zipf_)(rng_);
    }
    TraceRecord r;
    r.arrive_at = now_;
    r.direction = dir;
    r.node = static_cast<std::uint16_t>(slot / per_node_);
    r.remote_addr = (slot % per_node_) * mix_.block;
    r.len = mix_.block;
    r.actor = static_cast<ActorId>(count_ % mix_.actors);
    prev_slot_ = slot;
    prev_dir_ = dir;
    ++count_;
    return r;
  }

 private:
  MixSpec mix_;
  std::mt19937_64 rng_;
  std::shared_ptr<const ZipfSampler> zipf_;
  std::uniform_real_distribution<double> coin_{0.0, 1.0};
  std::exponential_distribution<double> gap_;
  std::uint64_t per_node_;
  SimTime now_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t prev_slot_ = 0;
  Direction prev_dir_ = Direction::kRead;
};

inline Trace gen_kv(const MixSpec& mix, std::uint64_t n, std::uint64_t seed) {
  require(n >= 1, "gen_kv requires n >= 1");
  KvStream s(mix, seed);
  Trace t;
  t.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) t.push_back(s.next());
  return t;
}

}  // namespace rdmabox
