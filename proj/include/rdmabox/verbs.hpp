#pragma once

// Verbs-shaped data model: requests, work requests, queue pairs, completion
// queues and the pre-registered message pool.

#include <compare>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rdmabox/sim_kernel.hpp"

namespace rdmabox {

using ReqId = std::uint64_t;
using WrId = std::uint64_t;
using MrId = std::uint64_t;
using QpId = std::uint32_t;
using CqId = std::uint32_t;
using ActorId = std::uint32_t;

struct NodeId {
  std::uint16_t id = 0;
  auto operator<=>(const NodeId&) const = default;
};

enum class Direction : std::uint8_t { kRead, kWrite };

inline const char* to_string(Direction d) { return d == Direction::kRead ? "read" : "write"; }

struct DataRequest {
  ReqId req_id = 0;
  Direction direction = Direction::kWrite;
  NodeId node;
  std::uint64_t remote_addr = 0;
  std::uint64_t len = 0;
  SimTime arrive_at = 0;
  ActorId origin_actor = 0;

  bool operator==(const DataRequest&) const = default;
};

enum class AddressSpace : std::uint8_t { kKernel, kUser };
enum class MrKind : std::uint8_t { kPreRegistered, kDynamic };

inline const char* to_string(AddressSpace s) { return s == AddressSpace::kKernel ? "kernel" : "user"; }
inline const char* to_string(MrKind k) { return k == MrKind::kPreRegistered ? "pre" : "dyn"; }

struct MemoryRegion {
  MrId mr_id = 0;
  std::uint64_t base = 0;
  std::uint64_t len = 0;
  MrKind kind = MrKind::kDynamic;
  AddressSpace space = AddressSpace::kKernel;
  SimTime registered_at = 0;

  bool contains(std::uint64_t addr, std::uint64_t n) const {
    return addr >= base && n <= len && addr - base <= len - n;
  }
};

struct ScatterGatherEntry {
  std::uint64_t local_addr = 0;
  std::uint64_t len = 0;
  MrId mr_ref = 0;
  // Kernel registrations use physical addresses and need no NIC translation entry.
  bool needs_translation = true;
};

enum class Opcode : std::uint8_t { kRdmaRead, kRdmaWrite };

inline Opcode opcode_for(Direction d) { return d == Direction::kRead ? Opcode::kRdmaRead : Opcode::kRdmaWrite; }

struct PoolSpan {
  std::uint32_t first = 0;
  std::uint32_t count = 0;
};

struct WorkRequest {
  WrId wr_id = 0;
  QpId qp = 0;
  Opcode opcode = Opcode::kRdmaWrite;
  std::vector<ScatterGatherEntry> sge_list;
  std::uint64_t remote_addr = 0;
  std::vector<ReqId> covers;
  std::optional<WrId> chain_next;
  bool signaled = true;

  // Host bookkeeping released when the completion is handled.
  std::optional<PoolSpan> pool_span;
  MrKind mr_kind = MrKind::kDynamic;

  std::uint64_t bytes() const {
    std::uint64_t n = 0;
    for (const auto& s : sge_list) n += s.len;
    return n;
  }
};

enum class WcStatus : std::uint8_t { kSuccess, kFlushed };

struct WorkCompletion {
  WrId wr_id = 0;
  WcStatus status = WcStatus::kSuccess;
  SimTime completed_at = 0;
  std::vector<ReqId> covers;
  QpId qp = 0;
  std::uint64_t bytes = 0;
  std::optional<PoolSpan> pool_span;
};

enum class CqOwner : std::uint8_t { kPerQp, kShared };

// Completion queue with armed-notification semantics. Arming a non-empty queue
// raises the interrupt right away so a completion landing between the last
// empty poll and the arm is never lost.
class CompletionQueue {
 public:
  CompletionQueue(CqId id, std::size_t capacity, CqOwner owner = CqOwner::kPerQp)
      : id_(id), capacity_(capacity), owner_(owner) {}

  CqId id() const { return id_; }
  std::size_t capacity() const { return capacity_; }
  CqOwner owner() const { return owner_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool notify_armed() const { return armed_; }

  // Invoked (synchronously) every time the queue raises an interrupt.
  void set_interrupt_handler(std::function<void()> fn) { on_interrupt_ = std::move(fn); }

  // One-shot callback for the next arrival; used by spinning pollers.
  void watch_next_arrival(std::function<void()> fn) { watcher_ = std::move(fn); }
  void clear_watch() { watcher_ = nullptr; }

  void push(WorkCompletion wc) {
    if (entries_.size() >= capacity_) throw ContractViolation("completion queue overflow");
    entries_.push_back(std::move(wc));
    if (armed_) {
      raise();
    } else if (watcher_) {
      auto w = std::move(watcher_);
      watcher_ = nullptr;
      w();
    }
  }

  std::vector<WorkCompletion> poll(std::size_t max) {
    require(max >= 1, "poll_cq requires max >= 1");
    std::vector<WorkCompletion> out;
    std::size_t n = std::min(max, entries_.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(std::move(entries_.front()));
      entries_.pop_front();
    }
    return out;
  }

  void request_notify() {
    if (armed_) return;
    armed_ = true;
    if (!entries_.empty()) raise();
  }

 private:
  void raise() {
    armed_ = false;
    if (on_interrupt_) on_interrupt_();
  }

  CqId id_;
  std::size_t capacity_;
  CqOwner owner_;
  std::deque<WorkCompletion> entries_;
  bool armed_ = false;
  std::function<void()> on_interrupt_;
  std::function<void()> watcher_;
};

inline std::vector<WorkCompletion> poll_cq(CompletionQueue& cq, std::size_t max) { return cq.poll(max); }
inline void request_notify(CompletionQueue& cq) { cq.request_notify(); }

class QueuePair {
 public:
  QueuePair(QpId id, NodeId node, std::uint32_t send_queue_depth, CompletionQueue* cq)
      : id_(id), node_(node), depth_(send_queue_depth), cq_(cq) {}

  QpId id() const { return id_; }
  NodeId node() const { return node_; }
  std::uint32_t send_queue_depth() const { return depth_; }
  CompletionQueue& cq() const { return *cq_; }
  std::uint32_t outstanding() const { return outstanding_; }
  bool has_room(std::size_t n) const { return outstanding_ + n <= depth_; }

  void on_posted(std::size_t n) {
    require(has_room(n), "send queue overflow");
    outstanding_ += static_cast<std::uint32_t>(n);
  }

  // Frees one slot when a completion is reaped; wakes one blocked poster if
  // its chain now fits.
  void on_reaped() {
    require(outstanding_ > 0, "reaped more work requests than posted");
    --outstanding_;
    while (!waiters_.empty() && has_room(waiters_.front().first)) {
      auto fn = std::move(waiters_.front().second);
      waiters_.pop_front();
      fn();
    }
  }

  void wait_for_room(std::size_t n, std::function<void()> fn) {
    require(n <= depth_, "chain longer than the send queue");
    if (waiters_.empty() && has_room(n)) {
      fn();
      return;
    }
    waiters_.emplace_back(n, std::move(fn));
  }

 private:
  QpId id_;
  NodeId node_;
  std::uint32_t depth_;
  CompletionQueue* cq_;
  std::uint32_t outstanding_ = 0;
  std::deque<std::pair<std::size_t, std::function<void()>>> waiters_;
};

// Pre-registered message pool: one registered region carved into fixed-size
// slots. A merged preMR buffer takes a contiguous span of slots. Safe for
// concurrent callers; the simulator uses the non-blocking entry points plus
// callback waiters, host threads may use acquire_blocking.
class MessagePool {
 public:
  MessagePool(MemoryRegion region, std::uint64_t slot_size)
      : region_(region), slot_size_(slot_size),
        used_(static_cast<std::size_t>(region.len / slot_size), false) {
    require(slot_size > 0 && region.len >= slot_size, "message pool needs at least one slot");
  }

  const MemoryRegion& region() const { return region_; }
  std::uint64_t slot_size() const { return slot_size_; }
  std::uint32_t slots() const { return static_cast<std::uint32_t>(used_.size()); }

  std::uint32_t slots_for(std::uint64_t bytes) const {
    return static_cast<std::uint32_t>(std::max<std::uint64_t>(1, ceil_div(bytes, slot_size_)));
  }

  std::optional<PoolSpan> try_acquire(std::uint32_t count) {
    std::lock_guard lock(mu_);
    return acquire_locked(count);
  }

  PoolSpan acquire_blocking(std::uint32_t count) {
    std::unique_lock lock(mu_);
    require(count <= used_.size(), "pool span larger than the pool");
    std::optional<PoolSpan> span;
    cv_.wait(lock, [&] { return (span = acquire_locked(count)).has_value(); });
    return *span;
  }

  void release(PoolSpan span) {
    std::vector<std::pair<std::function<void(PoolSpan)>, PoolSpan>> ready;
    {
      std::lock_guard lock(mu_);
      for (std::uint32_t i = span.first; i < span.first + span.count; ++i) {
        require(used_[i], "double release of a pool slot");
        used_[i] = false;
        --in_use_;
      }
      // Callback waiters are served FIFO while the head fits.
      while (!waiters_.empty()) {
        auto got = acquire_locked(waiters_.front().first);
        if (!got) break;
        ready.emplace_back(std::move(waiters_.front().second), *got);
        waiters_.pop_front();
      }
    }
    cv_.notify_all();
    for (auto& [fn, s] : ready) fn(s);
  }

  // Simulator path: `fn` runs (synchronously) once a span is available.
  void acquire_or_wait(std::uint32_t count, std::function<void(PoolSpan)> fn) {
    std::optional<PoolSpan> got;
    {
      std::lock_guard lock(mu_);
      require(count <= used_.size(), "pool span larger than the pool");
      if (waiters_.empty()) got = acquire_locked(count);
      if (!got) waiters_.emplace_back(count, std::move(fn));
    }
    if (got) fn(*got);
  }

  std::uint32_t in_use() const {
    std::lock_guard lock(mu_);
    return in_use_;
  }

  ScatterGatherEntry sge_for(PoolSpan span, std::uint64_t len) const {
    return ScatterGatherEntry{region_.base + span.first * slot_size_, len, region_.mr_id, true};
  }

 private:
  std::optional<PoolSpan> acquire_locked(std::uint32_t count) {
    std::uint32_t run = 0;
    for (std::uint32_t i = 0; i < used_.size(); ++i) {
      run = used_[i] ? 0 : run + 1;
      if (run == count) {
        std::uint32_t first = i + 1 - count;
        for (std::uint32_t j = first; j <= i; ++j) used_[j] = true;
        in_use_ += count;
        return PoolSpan{first, count};
      }
    }
    return std::nullopt;
  }

  MemoryRegion region_;
  std::uint64_t slot_size_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<bool> used_;
  std::uint32_t in_use_ = 0;
  std::deque<std::pair<std::uint32_t, std::function<void(PoolSpan)>>> waiters_;
};

}  // namespace rdmabox
