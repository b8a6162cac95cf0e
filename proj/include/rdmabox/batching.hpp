#pragma once

// Merge queue and the merge-and-chain engine. Requests land in one queue per
// direction; whichever actor holds the queue's consumer token drains it,
// merging address-contiguous runs into single work requests and doorbell
// chaining the rest per destination node.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "rdmabox/admission.hpp"
#include "rdmabox/session.hpp"
#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/verbs.hpp"

namespace rdmabox {

enum class BatchMode : std::uint8_t { kSingle, kMerge, kDoorbell, kHybrid };
enum class MrStrategy : std::uint8_t { kAuto, kForcePre, kForceDyn };

inline const char* to_string(BatchMode m) {
  switch (m) {
    case BatchMode::kSingle: return "single";
    case BatchMode::kMerge: return "merge";
    case BatchMode::kDoorbell: return "doorbell";
    case BatchMode::kHybrid: return "hybrid";
  }
  return "?";
}

inline const char* to_string(MrStrategy s) {
  switch (s) {
    case MrStrategy::kAuto: return "auto";
    case MrStrategy::kForcePre: return "pre";
    case MrStrategy::kForceDyn: return "dyn";
  }
  return "?";
}

struct BatchPolicy {
  std::uint32_t max_chaining_size = 16;
  MrStrategy mr_strategy = MrStrategy::kAuto;
  std::uint64_t auto_threshold = 928_KiB;
  std::uint64_t max_merged_bytes = 1_MiB;
  BatchMode mode = BatchMode::kHybrid;
  // CPU time of one dequeue + adjacency check inside the critical section.
  SimTime merge_check_cost = 100;

  bool merging() const { return mode == BatchMode::kMerge || mode == BatchMode::kHybrid; }
  bool chaining() const { return mode == BatchMode::kDoorbell || mode == BatchMode::kHybrid; }

  // Kernel space always registers; user space copies below the threshold.
  MrKind choose_mr(AddressSpace space, std::uint64_t bytes) const {
    switch (mr_strategy) {
      case MrStrategy::kForcePre: return MrKind::kPreRegistered;
      case MrStrategy::kForceDyn: return MrKind::kDynamic;
      case MrStrategy::kAuto: break;
    }
    if (space == AddressSpace::kKernel) return MrKind::kDynamic;
    return bytes < auto_threshold ? MrKind::kPreRegistered : MrKind::kDynamic;
  }

  void validate() const {
    require(max_chaining_size >= 1, "batching: max_chaining_size must be >= 1");
    require(max_merged_bytes > 0, "batching: max_merged_bytes must be positive");
  }
};

enum class MergeRelation : std::uint8_t { kAdjacent, kChainable, kUnrelated };

// `a` precedes `b` in queue order.
inline MergeRelation merge_check(const DataRequest& a, const DataRequest& b) {
  if (a.node != b.node) return MergeRelation::kUnrelated;
  if (a.remote_addr + a.len == b.remote_addr) return MergeRelation::kAdjacent;
  return MergeRelation::kChainable;
}

class MergeQueue {
 public:
  MergeQueue(Direction direction, std::size_t capacity) : direction_(direction), capacity_(capacity) {}

  Direction direction() const { return direction_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool full() const { return entries_.size() >= capacity_; }
  const DataRequest& front() const { return entries_.front(); }
  const std::deque<DataRequest>& items() const { return entries_; }

  bool enqueue(DataRequest r) {
    require(r.direction == direction_, "request enqueued on the wrong direction's queue");
    if (full()) return false;
    entries_.push_back(r);
    return true;
  }

  std::optional<DataRequest> dequeue() {
    if (entries_.empty()) return std::nullopt;
    DataRequest r = entries_.front();
    entries_.pop_front();
    while (!space_waiters_.empty() && !full()) {
      auto fn = std::move(space_waiters_.front());
      space_waiters_.pop_front();
      fn();
    }
    return r;
  }

  void wait_for_space(std::function<void()> fn) { space_waiters_.push_back(std::move(fn)); }

  bool try_acquire_token() {
    if (token_held_) return false;
    token_held_ = true;
    return true;
  }
  void release_token() {
    require(token_held_, "token released without being held");
    token_held_ = false;
  }
  bool token_held() const { return token_held_; }

 private:
  Direction direction_;
  std::size_t capacity_;
  std::deque<DataRequest> entries_;
  std::deque<std::function<void()>> space_waiters_;
  bool token_held_ = false;
};

struct MergedRun {
  NodeId node;
  std::vector<DataRequest> requests;
  MrKind mr = MrKind::kDynamic;

  std::uint64_t bytes() const {
    std::uint64_t n = 0;
    for (const auto& r : requests) n += r.len;
    return n;
  }
};

struct PostGroup {
  NodeId node;
  std::vector<std::size_t> runs;  // indices into BatchPlan::runs, chain order
};

struct BatchPlan {
  std::vector<MergedRun> runs;
  std::vector<PostGroup> posts;
  std::uint64_t merges = 0;  // requests folded into a preceding one
  std::uint64_t chains = 0;  // chain links (chain length - 1, summed)
};

// Greedy, in-order grouping of one dequeued batch. Each node keeps one open
// run; a request extends it only when it starts exactly where the run ends.
// Nothing is reordered within a node.
inline BatchPlan plan_batch(std::span<const DataRequest> taken, const BatchPolicy& policy,
                            AddressSpace space, std::uint64_t pool_limit_bytes = ~0ull) {
  BatchPlan plan;
  std::vector<std::pair<NodeId, std::size_t>> open;  // node -> run index
  auto open_run = [&](NodeId n) -> std::optional<std::size_t> {
    for (auto& [node, idx] : open)
      if (node == n) return idx;
    return std::nullopt;
  };
  const std::uint64_t merge_limit = std::min(policy.max_merged_bytes, pool_limit_bytes);
  for (const auto& r : taken) {
    auto idx = open_run(r.node);
    if (policy.merging() && idx) {
      auto& run = plan.runs[*idx];
      if (merge_check(run.requests.back(), r) == MergeRelation::kAdjacent &&
          run.bytes() + r.len <= merge_limit) {
        run.requests.push_back(r);
        ++plan.merges;
        continue;
      }
    }
    plan.runs.push_back(MergedRun{r.node, {r}, MrKind::kDynamic});
    bool found = false;
    for (auto& [node, i] : open) {
      if (node == r.node) {
        i = plan.runs.size() - 1;
        found = true;
      }
    }
    if (!found) open.emplace_back(r.node, plan.runs.size() - 1);
  }
  for (auto& run : plan.runs) run.mr = policy.choose_mr(space, run.bytes());

  for (std::size_t i = 0; i < plan.runs.size(); ++i) {
    const NodeId n = plan.runs[i].node;
    if (policy.chaining()) {
      auto it = std::find_if(plan.posts.begin(), plan.posts.end(), [&](const PostGroup& g) { return g.node == n; });
      if (it != plan.posts.end() && it->runs.size() < policy.max_chaining_size) {
        it->runs.push_back(i);
        ++plan.chains;
        continue;
      }
    }
    plan.posts.push_back(PostGroup{n, {i}});
  }
  return plan;
}

struct BuiltWr {
  WorkRequest wr;
  SimTime cost = 0;
};

// Turns one adjacent run into a single work request. preMR copies the run into
// one pool span (1 SGE); dynMR registers every source buffer (1 SGE each).
inline BuiltWr req_merging(Session& session, const MergedRun& run, QpId qp,
                           std::optional<PoolSpan> span = std::nullopt) {
  require(!run.requests.empty(), "req_merging on an empty run");
  for (std::size_t i = 1; i < run.requests.size(); ++i) {
    require(merge_check(run.requests[i - 1], run.requests[i]) == MergeRelation::kAdjacent,
            "req_merging run is not contiguous");
  }
  const AddressSpace space = session.config().space;
  BuiltWr out;
  WorkRequest& wr = out.wr;
  wr.wr_id = session.next_wr_id();
  wr.qp = qp;
  wr.opcode = opcode_for(run.requests.front().direction);
  wr.remote_addr = run.requests.front().remote_addr;
  wr.mr_kind = run.mr;
  for (const auto& r : run.requests) wr.covers.push_back(r.req_id);

  if (run.mr == MrKind::kPreRegistered) {
    require(span.has_value(), "preMR merge needs a pool span");
    const auto& pool = session.mempool();
    require(span->count * pool.slot_size() >= run.bytes(), "pool span too small for the run");
    Registration reg = session.register_mr(space, run.bytes(), MrKind::kPreRegistered);
    wr.sge_list.push_back(pool.sge_for(*span, run.bytes()));
    wr.pool_span = span;
    out.cost = reg.cost;
  } else {
    for (const auto& r : run.requests) {
      // Synthetic local buffer address, unique per request.
      const std::uint64_t local = (r.req_id + 1) << 24;
      Registration reg = session.register_mr(space, r.len, MrKind::kDynamic, local);
      wr.sge_list.push_back(ScatterGatherEntry{local, r.len, reg.region.mr_id, space == AddressSpace::kUser});
      out.cost += reg.cost;
    }
  }
  return out;
}

// Links `wrs` into one doorbell chain, head first.
inline std::vector<WorkRequest> req_chaining(std::vector<WorkRequest> wrs, std::uint32_t max_chaining_size) {
  require(wrs.size() <= max_chaining_size, "chain longer than max_chaining_size");
  for (std::size_t i = 0; i < wrs.size(); ++i) {
    require(wrs[i].qp == wrs.front().qp, "chain spans more than one queue pair");
    if (i + 1 < wrs.size()) {
      wrs[i].chain_next = wrs[i + 1].wr_id;
    } else {
      wrs[i].chain_next.reset();
    }
  }
  return wrs;
}

struct Batch {
  std::vector<WorkRequest> segments;            // every WR built, in post order
  std::vector<std::vector<WrId>> chains;        // one entry per doorbell
  std::uint64_t merges = 0;
  std::uint64_t chains_linked = 0;
  SimTime started = 0;
  SimTime posted = 0;
};

// Merge-and-chain pass as an event-driven state machine. The calling actor's
// continuation runs once it is free to issue its next request.
class MergeEngine {
 public:
  MergeEngine(Simulator& sim, HostCpu& cpu, Session& session, TrafficRegulator& regulator,
              BatchPolicy policy, std::size_t queue_capacity = 1u << 20)
      : sim_(sim), cpu_(cpu), session_(session), regulator_(regulator), policy_(policy),
        read_q_(Direction::kRead, queue_capacity), write_q_(Direction::kWrite, queue_capacity) {
    policy_.validate();
  }

  MergeQueue& queue(Direction d) { return d == Direction::kRead ? read_q_ : write_q_; }
  const BatchPolicy& policy() const { return policy_; }
  void set_batch_observer(std::function<void(const Batch&)> fn) { observer_ = std::move(fn); }

  // Critical-section cost of one request batched alone (used to size gaps in
  // the load-aware experiments).
  SimTime solo_critical_section(std::uint64_t len) const {
    const AddressSpace space = session_.config().space;
    MrKind kind = policy_.choose_mr(space, len);
    return policy_.merge_check_cost + session_.config().mr_costs.cost(space, kind, len);
  }

  void req_msg(DataRequest r, std::function<void()> done) {
    MergeQueue& q = queue(r.direction);
    if (q.full()) {
      q.wait_for_space([this, r, done = std::move(done)]() mutable { req_msg(r, std::move(done)); });
      return;
    }
    q.enqueue(r);
    sim_.metrics().inc(metric::kRequestsIn);
    depth_gauge_add(1);
    if (q.try_acquire_token()) {
      merge_and_chain(r.direction, std::move(done));
    } else {
      done();
    }
  }

 private:
  struct Pass {
    Direction dir;
    std::vector<DataRequest> taken;
    std::function<void()> done;
    Batch batch;
    BatchPlan plan;
    std::vector<BuiltWr> built;
    std::vector<QpId> group_qp;
    std::size_t cursor = 0;
    std::uint64_t reserved = 0;
  };
  using PassPtr = std::shared_ptr<Pass>;

  void depth_gauge_add(std::int64_t d) {
    sim_.metrics().gauge(metric::kMergeQueueDepth).add(sim_.now(), d);
  }

  void merge_and_chain(Direction dir, std::function<void()> done) {
    MergeQueue& q = queue(dir);
    if (q.empty()) {
      release_and_recheck(dir, std::move(done));
      return;
    }
    auto pass = std::make_shared<Pass>();
    pass->dir = dir;
    pass->done = std::move(done);
    // One pacer call per pass covers the batch visible right now: the first
    // max_chaining_size queued requests, trimmed to what the window can hold.
    // Only the token holder dequeues, so these stay at the front meanwhile.
    std::uint64_t need = 0;
    std::size_t n = 0;
    for (const DataRequest& r : q.items()) {
      if (n == policy_.max_chaining_size) break;
      const std::uint64_t b = regulator_.round_up(r.len);
      if (n > 0 && regulator_.enabled() && need + b > regulator_.window_bytes()) break;
      need += b;
      ++n;
    }
    regulator_.traffic_pacer_blocking(need, [this, pass, need] {
      pass->batch.started = sim_.now();
      pass->reserved = need;
      take_one(pass);
    });
  }

  void take_one(const PassPtr& pass) {
    MergeQueue& q = queue(pass->dir);
    pass->taken.push_back(*q.dequeue());
    const std::uint64_t b = regulator_.round_up(pass->taken.back().len);
    pass->reserved -= std::min(pass->reserved, b);
    depth_gauge_add(-1);
    cpu_.run(policy_.merge_check_cost, [this, pass] { after_check(pass); });
  }

  void after_check(const PassPtr& pass) {
    MergeQueue& q = queue(pass->dir);
    if (pass->taken.size() < policy_.max_chaining_size && !q.empty()) {
      const std::uint64_t b = regulator_.round_up(q.front().len);
      if (b <= pass->reserved || regulator_.try_acquire(b)) {
        if (b > pass->reserved) pass->reserved += b;
        take_one(pass);
        return;
      }
    }
    if (pass->reserved > 0) {
      regulator_.give_back(pass->reserved);
      pass->reserved = 0;
    }
    build(pass);
  }

  void build(const PassPtr& pass) {
    const auto& pool = session_.mempool();
    pass->plan = plan_batch(pass->taken, policy_, session_.config().space,
                            std::uint64_t{pool.slots()} * pool.slot_size());
    pass->built.resize(pass->plan.runs.size());
    pass->group_qp.clear();
    std::vector<QpId> run_qp(pass->plan.runs.size());
    for (const auto& g : pass->plan.posts) {
      QpId qp = session_.next_qp(g.node).id();
      pass->group_qp.push_back(qp);
      for (std::size_t i : g.runs) run_qp[i] = qp;
    }
    pass->cursor = 0;
    build_run(pass, std::move(run_qp));
  }

  void build_run(const PassPtr& pass, std::vector<QpId> run_qp) {
    if (pass->cursor == pass->plan.runs.size()) {
      SimTime cost = 0;
      for (const auto& b : pass->built) cost += b.cost;
      cpu_.run(cost, [this, pass] {
        pass->cursor = 0;
        post_group(pass);
      });
      return;
    }
    const std::size_t i = pass->cursor;
    const MergedRun& run = pass->plan.runs[i];
    if (run.mr == MrKind::kPreRegistered) {
      auto& pool = session_.mempool();
      pool.acquire_or_wait(pool.slots_for(run.bytes()), [this, pass, i, run_qp](PoolSpan span) mutable {
        pass->built[i] = req_merging(session_, pass->plan.runs[i], run_qp[i], span);
        ++pass->cursor;
        build_run(pass, std::move(run_qp));
      });
      return;
    }
    pass->built[i] = req_merging(session_, run, run_qp[i]);
    ++pass->cursor;
    build_run(pass, std::move(run_qp));
  }

  void post_group(const PassPtr& pass) {
    if (pass->cursor == pass->plan.posts.size()) {
      finish(pass);
      return;
    }
    const PostGroup& g = pass->plan.posts[pass->cursor];
    QueuePair* qp = &session_.qp(pass->group_qp[pass->cursor]);
    std::vector<WorkRequest> wrs;
    for (std::size_t i : g.runs) wrs.push_back(pass->built[i].wr);
    wrs = req_chaining(std::move(wrs), policy_.max_chaining_size);
    const std::size_t n = wrs.size();
    qp->wait_for_room(n, [this, pass, qp, wrs = std::move(wrs)]() mutable {
      std::vector<WrId> ids;
      for (const auto& w : wrs) {
        ids.push_back(w.wr_id);
        pass->batch.segments.push_back(w);
      }
      pass->batch.chains.push_back(std::move(ids));
      session_.post_send(*qp, std::move(wrs));
      ++pass->cursor;
      // Later groups continue from a fresh event so a wake-up from on_reaped
      // never re-enters the QP's waiter loop.
      sim_.schedule_in(0, EventKind::kActorWakeup, [this, pass] { post_group(pass); });
    });
  }

  void finish(const PassPtr& pass) {
    auto& m = sim_.metrics();
    pass->batch.merges = pass->plan.merges;
    pass->batch.chains_linked = pass->plan.chains;
    pass->batch.posted = sim_.now();
    m.inc(metric::kMerges, pass->plan.merges);
    m.inc(metric::kChains, pass->plan.chains);
    if (observer_) observer_(pass->batch);
    merge_and_chain(pass->dir, std::move(pass->done));
  }

  void release_and_recheck(Direction dir, std::function<void()> done) {
    MergeQueue& q = queue(dir);
    q.release_token();
    if (!q.empty() && q.try_acquire_token()) {
      merge_and_chain(dir, std::move(done));
      return;
    }
    done();
  }

  Simulator& sim_;
  HostCpu& cpu_;
  Session& session_;
  TrafficRegulator& regulator_;
  BatchPolicy policy_;
  MergeQueue read_q_;
  MergeQueue write_q_;
  std::function<void(const Batch&)> observer_;
};

// Thread-safe merge queue with the same single-consumer-token protocol, for
// the concurrent stress mode.
template <typename T>
class ConcurrentMergeQueue {
 public:
  void enqueue(T v) {
    std::lock_guard lock(mu_);
    q_.push_back(std::move(v));
  }
  std::optional<T> try_dequeue() {
    std::lock_guard lock(mu_);
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }
  std::optional<T> peek() const {
    std::lock_guard lock(mu_);
    if (q_.empty()) return std::nullopt;
    return q_.front();
  }
  bool empty() const {
    std::lock_guard lock(mu_);
    return q_.empty();
  }
  bool try_acquire_token() {
    bool expected = false;
    return token_.compare_exchange_strong(expected, true, std::memory_order_acq_rel);
  }
  void release_token() { token_.store(false, std::memory_order_release); }

 private:
  mutable std::mutex mu_;
  std::deque<T> q_;
  std::atomic<bool> token_{false};
};

}  // namespace rdmabox
