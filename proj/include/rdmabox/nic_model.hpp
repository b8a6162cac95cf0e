#pragma once

// Simulated RNIC: doorbell (MMIO) vs chained DMA-read posting costs, finite
// LRU caches for WQEs, QP contexts and MPT entries, a single serial processing
// engine, and completion delivery.

#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/verbs.hpp"

namespace rdmabox {

inline constexpr std::uint64_t kPageSize = 4096;

struct NicConfig {
  std::uint32_t wqe_cache_slots = 256;
  std::uint32_t qp_cache_slots = 64;
  std::uint32_t mpt_cache_slots = 1024;
  SimTime mmio_cost = 600;
  SimTime dma_read_cost = 300;
  SimTime cache_miss_refetch_cost = 500;
  SimTime per_wqe_process_cost = 250;
  // 175 ps/B puts a 128 KiB transfer at ~23 us.
  std::uint64_t wire_ps_per_byte = 175;
  SimTime interrupt_cost = 2000;
  SimTime context_switch_cost = 3000;

  void validate() const {
    require(mmio_cost > dma_read_cost, "nic: mmio_cost must exceed dma_read_cost");
    require(dma_read_cost > 0 && cache_miss_refetch_cost > 0 && per_wqe_process_cost > 0 &&
                wire_ps_per_byte > 0 && interrupt_cost > 0 && context_switch_cost > 0,
            "nic: all costs must be positive");
    require(wqe_cache_slots > 0 && qp_cache_slots > 0 && mpt_cache_slots > 0,
            "nic: cache sizes must be positive");
  }

  SimTime wire_cost(std::uint64_t bytes) const { return bytes_cost(bytes, wire_ps_per_byte); }
};

// preMR pays a memcpy into a pool slot; dynMR pays a registration that scales
// with the page count. Kernel registrations are cheap (physical addresses);
// user registrations carry a large fixed translation cost.
struct MrCostModel {
  SimTime kernel_reg_base = 150;
  SimTime kernel_reg_per_page = 50;
  SimTime user_reg_base = 37027;
  SimTime user_reg_per_page = 250;
  std::uint64_t memcpy_ps_per_byte = 100;

  SimTime memcpy_cost(std::uint64_t len) const { return bytes_cost(len, memcpy_ps_per_byte); }

  SimTime reg_cost(AddressSpace space, std::uint64_t len) const {
    std::uint64_t pages = ceil_div(len, kPageSize);
    return space == AddressSpace::kKernel ? kernel_reg_base + kernel_reg_per_page * pages
                                          : user_reg_base + user_reg_per_page * pages;
  }

  SimTime cost(AddressSpace space, MrKind kind, std::uint64_t len) const {
    require(len > 0, "mr_cost requires len > 0");
    return kind == MrKind::kPreRegistered ? memcpy_cost(len) : reg_cost(space, len);
  }

  // Smallest page-multiple size at which a user-space registration is no more
  // expensive than the copy; 0 when the copy always wins up to `limit`.
  std::uint64_t user_crossover(std::uint64_t limit = 64_MiB) const {
    for (std::uint64_t s = kPageSize; s <= limit; s += kPageSize) {
      if (reg_cost(AddressSpace::kUser, s) <= memcpy_cost(s)) return s;
    }
    return 0;
  }
};

inline SimTime mr_cost(const MrCostModel& m, AddressSpace space, MrKind kind, std::uint64_t len) {
  return m.cost(space, kind, len);
}

template <typename Key>
class LruSet {
 public:
  explicit LruSet(std::size_t capacity) : capacity_(capacity) {}

  // Returns true on hit. Misses insert and may evict the least recent entry.
  bool touch(const Key& k) {
    auto it = index_.find(k);
    if (it != index_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      return true;
    }
    insert_new(k);
    return false;
  }

  bool contains(const Key& k) const { return index_.count(k) != 0; }

  void erase(const Key& k) {
    auto it = index_.find(k);
    if (it == index_.end()) return;
    order_.erase(it->second);
    index_.erase(it);
  }

  std::size_t size() const { return index_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  void insert_new(const Key& k) {
    if (index_.size() >= capacity_) {
      index_.erase(order_.back());
      order_.pop_back();
      ++evictions_;
    }
    order_.push_front(k);
    index_[k] = order_.begin();
  }

  std::size_t capacity_;
  std::list<Key> order_;
  std::unordered_map<Key, typename std::list<Key>::iterator> index_;
  std::uint64_t evictions_ = 0;
};

struct NicPostRecord {
  SimTime at = 0;
  QpId qp = 0;
  std::vector<WrId> chain;
  SimTime intake_cost = 0;  // mmio + dma reads + qp/mpt refetches
  std::uint32_t qp_misses = 0;
  std::uint32_t mpt_misses = 0;
};

struct NicProcessRecord {
  WrId wr_id = 0;
  SimTime start = 0;
  SimTime finish = 0;
  std::uint64_t bytes = 0;
  bool wqe_refetched = false;
  SimTime intake_share = 0;
};

class Nic {
 public:
  Nic(Simulator& sim, NicConfig config) : sim_(sim), cfg_(config), wqe_cache_(config.wqe_cache_slots),
        qp_cache_(config.qp_cache_slots), mpt_cache_(config.mpt_cache_slots) {
    cfg_.validate();
  }

  const NicConfig& config() const { return cfg_; }
  std::size_t pending() const { return queue_.size(); }
  std::size_t inflight() const { return inflight_; }
  SimTime busy_until() const { return busy_until_; }
  SimTime total_charged() const { return total_charged_; }
  const LruSet<WrId>& wqe_cache() const { return wqe_cache_; }
  const LruSet<QpId>& qp_cache() const { return qp_cache_; }
  const LruSet<MrId>& mpt_cache() const { return mpt_cache_; }

  void enable_logs(bool on) { logging_ = on; }
  const std::vector<NicPostRecord>& post_log() const { return post_log_; }
  const std::vector<NicProcessRecord>& process_log() const { return process_log_; }

  // Hands a doorbell-chained list (head first) to the NIC. One MMIO carries
  // the head; the remaining WQEs are fetched by DMA reads. Returns the intake
  // cost charged to the engine.
  SimTime accept_post(std::vector<WorkRequest> chain, CompletionQueue& cq) {
    require(!chain.empty(), "accept_post with an empty chain");
    auto& m = sim_.metrics();
    const QpId qp = chain.front().qp;
    NicPostRecord rec;
    rec.at = sim_.now();
    rec.qp = qp;

    SimTime intake = cfg_.mmio_cost + (chain.size() - 1) * cfg_.dma_read_cost;
    m.inc(metric::kMmio);
    m.inc(metric::kDmaRead, chain.size() - 1);
    m.inc(metric::kWqePosted, chain.size());
    m.inc("posts");

    if (!qp_cache_.touch(qp)) {
      intake += cfg_.cache_miss_refetch_cost;
      ++rec.qp_misses;
      m.inc("qp_cache_miss");
    }
    std::uint64_t bytes = 0;
    for (std::size_t i = 0; i < chain.size(); ++i) {
      auto& wr = chain[i];
      require(wr.qp == qp, "chain spans more than one queue pair");
      require(!wr.covers.empty(), "work request covers no data request");
      for (const auto& sge : wr.sge_list) {
        if (!sge.needs_translation) continue;
        if (!mpt_cache_.touch(sge.mr_ref)) {
          intake += cfg_.cache_miss_refetch_cost;
          ++rec.mpt_misses;
          m.inc("mpt_cache_miss");
        }
      }
      wqe_cache_.touch(wr.wr_id);
      rec.chain.push_back(wr.wr_id);
      bytes += wr.bytes();
    }
    rec.intake_cost = intake;

    // The whole intake is paid before the head is processed.
    for (std::size_t i = 0; i < chain.size(); ++i) {
      queue_.push_back(Pending{std::move(chain[i]), &cq, sim_.now(), i == 0 ? intake : 0});
    }
    inflight_ += rec.chain.size();
    m.gauge(metric::kInFlightOps).add(sim_.now(), static_cast<std::int64_t>(rec.chain.size()));
    m.gauge(metric::kInFlightBytes).add(sim_.now(), static_cast<std::int64_t>(bytes));
    if (logging_) post_log_.push_back(std::move(rec));

    if (!stepping_) {
      stepping_ = true;
      sim_.schedule_at(std::max(sim_.now(), busy_until_), EventKind::kNicStep, [this] { process_step(); });
    }
    return intake;
  }

  // Processes the oldest queued WQE. A WQE evicted from the cache between
  // posting and processing must be fetched again, which is what makes the
  // engine slow down under overload.
  void process_step() {
    if (queue_.empty()) {
      stepping_ = false;
      return;
    }
    Pending p = std::move(queue_.front());
    queue_.pop_front();
    auto& m = sim_.metrics();

    const std::uint64_t bytes = p.wr.bytes();
    SimTime cost = p.intake_share + cfg_.per_wqe_process_cost + cfg_.wire_cost(bytes);
    bool refetched = !wqe_cache_.contains(p.wr.wr_id);
    if (refetched) {
      cost += cfg_.cache_miss_refetch_cost;
      m.inc("wqe_cache_miss");
    }
    wqe_cache_.erase(p.wr.wr_id);

    const SimTime start = sim_.now();
    const SimTime finish = start + cost;
    busy_until_ = finish;
    total_charged_ += cost;
    if (logging_) {
      process_log_.push_back(NicProcessRecord{p.wr.wr_id, start, finish, bytes, refetched, p.intake_share});
    }
    m.histogram(metric::kIoCompletionTime).record(finish - p.posted_at);

    WorkCompletion wc;
    wc.wr_id = p.wr.wr_id;
    wc.status = WcStatus::kSuccess;
    wc.completed_at = finish;
    wc.covers = std::move(p.wr.covers);
    wc.qp = p.wr.qp;
    wc.bytes = bytes;
    wc.pool_span = p.wr.pool_span;
    CompletionQueue* cq = p.cq;
    sim_.schedule_at(finish, EventKind::kCompletionDelivery,
                     [this, cq, wc = std::move(wc)]() mutable { deliver_completion(*cq, std::move(wc)); });
    sim_.schedule_at(finish, EventKind::kNicStep, [this] { process_step(); });
  }

  void deliver_completion(CompletionQueue& cq, WorkCompletion wc) {
    auto& m = sim_.metrics();
    require(inflight_ > 0, "completion without an in-flight work request");
    --inflight_;
    m.gauge(metric::kInFlightOps).add(sim_.now(), -1);
    m.gauge(metric::kInFlightBytes).add(sim_.now(), -static_cast<std::int64_t>(wc.bytes));
    cq.push(std::move(wc));
  }

 private:
  struct Pending {
    WorkRequest wr;
    CompletionQueue* cq;
    SimTime posted_at;
    SimTime intake_share;
  };

  Simulator& sim_;
  NicConfig cfg_;
  LruSet<WrId> wqe_cache_;
  LruSet<QpId> qp_cache_;
  LruSet<MrId> mpt_cache_;
  std::deque<Pending> queue_;
  std::size_t inflight_ = 0;
  SimTime busy_until_ = 0;
  SimTime total_charged_ = 0;
  bool stepping_ = false;
  bool logging_ = false;
  std::vector<NicPostRecord> post_log_;
  std::vector<NicProcessRecord> process_log_;
};

}  // namespace rdmabox
