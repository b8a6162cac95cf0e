#include <gtest/gtest.h>

#include <map>
#include <memory>
#include <random>
#include <set>
#include <vector>

#include "rdmabox/batching.hpp"
#include "rdmabox/polling.hpp"

using namespace rdmabox;

namespace {

DataRequest req(ReqId id, std::uint16_t node, std::uint64_t addr, std::uint64_t len = 4096,
                Direction d = Direction::kWrite) {
  return DataRequest{id, d, NodeId{node}, addr, len, 0, 0};
}

// Full host stack with hybrid pollers on every CQ so completions flow back
// into the regulator.
struct Stack {
  Simulator sim;
  HostCpu cpu{sim, 8};
  Nic nic;
  Session session;
  TrafficRegulator reg;
  MergeEngine engine;
  std::vector<std::unique_ptr<Poller>> pollers;
  std::vector<Batch> batches;
  std::set<ReqId> completed;

  Stack(BatchPolicy policy, std::uint64_t window = 0, std::uint16_t peers = 2)
      : nic(sim, NicConfig{}),
        session(sim, nic, SessionConfig{peers, 1, 256, 0, AddressSpace::kKernel, 128_KiB, 64, {}}),
        reg(window, 4096, &sim),
        engine(sim, cpu, session, reg, policy) {
    nic.enable_logs(true);
    session.register_handler([this](const WorkCompletion& wc) {
      for (ReqId r : wc.covers) EXPECT_TRUE(completed.insert(r).second) << "req " << r;
      reg.on_completion(wc.bytes);
    });
    for (const auto& cq : session.cqs()) {
      pollers.push_back(std::make_unique<Poller>(sim, cpu, session, *cq, PollingStrategy::hybrid(), PollCosts{}));
      pollers.back()->start();
    }
    engine.set_batch_observer([this](const Batch& b) { batches.push_back(b); });
  }

  void submit_at(SimTime t, std::vector<DataRequest> rs) {
    sim.schedule_at(t, EventKind::kPostArrival, [this, rs] {
      for (const auto& r : rs) engine.req_msg(r, [] {});
    });
  }
};

BatchPolicy policy(BatchMode m, std::uint32_t max_chain = 16) {
  BatchPolicy p;
  p.mode = m;
  p.max_chaining_size = max_chain;
  return p;
}

}  // namespace

TEST(MergeCheck, Relations) {
  EXPECT_EQ(merge_check(req(0, 0, 0), req(1, 0, 4096)), MergeRelation::kAdjacent);
  EXPECT_EQ(merge_check(req(0, 0, 0), req(1, 0, 8192)), MergeRelation::kChainable);
  EXPECT_EQ(merge_check(req(0, 0, 4096), req(1, 0, 0)), MergeRelation::kChainable);  // order matters
  EXPECT_EQ(merge_check(req(0, 0, 0), req(1, 1, 4096)), MergeRelation::kUnrelated);
}

TEST(MergeQueue, DirectionAndCapacity) {
  MergeQueue q(Direction::kRead, 2);
  EXPECT_THROW(q.enqueue(req(0, 0, 0)), ContractViolation);
  EXPECT_TRUE(q.enqueue(req(0, 0, 0, 4096, Direction::kRead)));
  EXPECT_TRUE(q.enqueue(req(1, 0, 0, 4096, Direction::kRead)));
  EXPECT_FALSE(q.enqueue(req(2, 0, 0, 4096, Direction::kRead)));
  bool woke = false;
  q.wait_for_space([&] { woke = true; });
  EXPECT_EQ(q.dequeue()->req_id, 0u);
  EXPECT_TRUE(woke);
  EXPECT_TRUE(q.try_acquire_token());
  EXPECT_FALSE(q.try_acquire_token());
  q.release_token();
  EXPECT_THROW(q.release_token(), ContractViolation);
}

TEST(PlanBatch, InvariantsOnRandomBatches) {
  std::mt19937_64 rng(11);
  for (BatchMode mode : {BatchMode::kSingle, BatchMode::kMerge, BatchMode::kDoorbell, BatchMode::kHybrid}) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<DataRequest> taken;
      std::map<std::uint16_t, std::uint64_t> next_addr;
      const std::size_t n = 1 + rng() % 24;
      for (ReqId i = 0; i < n; ++i) {
        const auto node = static_cast<std::uint16_t>(rng() % 3);
        std::uint64_t& a = next_addr[node];
        if (rng() % 3 == 0) a = (rng() % 64) * 4096;
        const std::uint64_t len = 4096 * (1 + rng() % 3);
        taken.push_back(req(i, node, a, len));
        a += len;
      }
      BatchPolicy p = policy(mode, 1 + static_cast<std::uint32_t>(rng() % 6));
      p.max_merged_bytes = 16384;
      const BatchPlan plan = plan_batch(taken, p, AddressSpace::kKernel);

      // Every request lands in exactly one run, in queue order within a node.
      std::vector<int> seen(n, 0);
      std::map<std::uint16_t, ReqId> last_in_node;
      std::size_t merged = 0;
      for (const auto& run : plan.runs) {
        ASSERT_FALSE(run.requests.empty());
        EXPECT_LE(run.requests.size() == 1 ? 0 : run.bytes(), p.max_merged_bytes);
        if (!p.merging()) {
          EXPECT_EQ(run.requests.size(), 1u);
        }
        for (std::size_t i = 0; i < run.requests.size(); ++i) {
          EXPECT_EQ(run.requests[i].node, run.node);
          if (i > 0) {
            EXPECT_EQ(merge_check(run.requests[i - 1], run.requests[i]), MergeRelation::kAdjacent);
            ++merged;
          }
          ++seen[run.requests[i].req_id];
        }
        auto it = last_in_node.find(run.node.id);
        if (it != last_in_node.end()) {
          EXPECT_LT(it->second, run.requests.front().req_id);
        }
        last_in_node[run.node.id] = run.requests.back().req_id;
      }
      for (int s : seen) EXPECT_EQ(s, 1);
      EXPECT_EQ(plan.merges, merged);
      EXPECT_EQ(plan.merges, n - plan.runs.size());

      // Every run posted once; chains are single-node and bounded.
      std::vector<int> posted(plan.runs.size(), 0);
      for (const auto& g : plan.posts) {
        EXPECT_LE(g.runs.size(), p.chaining() ? p.max_chaining_size : 1u);
        for (std::size_t i : g.runs) {
          EXPECT_EQ(plan.runs[i].node, g.node);
          ++posted[i];
        }
      }
      for (int c : posted) EXPECT_EQ(c, 1);
      EXPECT_EQ(plan.chains, plan.runs.size() - plan.posts.size());
    }
  }
}

TEST(PlanBatch, MergesOnlyExactContinuations) {
  std::vector<DataRequest> t{req(0, 0, 0), req(1, 0, 4096), req(2, 1, 8192), req(3, 0, 8192), req(4, 0, 20480)};
  auto plan = plan_batch(t, policy(BatchMode::kHybrid), AddressSpace::kKernel);
  ASSERT_EQ(plan.runs.size(), 3u);
  EXPECT_EQ(plan.runs[0].requests.size(), 3u);  // 0,1,3 across an interleaved node-1 request
  EXPECT_EQ(plan.merges, 2u);
  ASSERT_EQ(plan.posts.size(), 2u);
  EXPECT_EQ(plan.chains, 1u);
}

TEST(PlanBatch, PoolLimitCapsMergedSize) {
  std::vector<DataRequest> t{req(0, 0, 0), req(1, 0, 4096), req(2, 0, 8192)};
  auto plan = plan_batch(t, policy(BatchMode::kMerge), AddressSpace::kUser, 8192);
  ASSERT_EQ(plan.runs.size(), 2u);
  EXPECT_EQ(plan.runs[0].bytes(), 8192u);
}

TEST(PlanBatch, MrChoiceFollowsSpaceAndThreshold) {
  BatchPolicy p;
  EXPECT_EQ(p.choose_mr(AddressSpace::kKernel, 4096), MrKind::kDynamic);
  EXPECT_EQ(p.choose_mr(AddressSpace::kUser, 4096), MrKind::kPreRegistered);
  EXPECT_EQ(p.choose_mr(AddressSpace::kUser, p.auto_threshold), MrKind::kDynamic);
  p.mr_strategy = MrStrategy::kForcePre;
  EXPECT_EQ(p.choose_mr(AddressSpace::kKernel, 4096), MrKind::kPreRegistered);
}

TEST(ReqChaining, LinksHeadToTail) {
  std::vector<WorkRequest> wrs(3);
  for (WrId i = 0; i < 3; ++i) {
    wrs[i].wr_id = 10 + i;
    wrs[i].qp = 1;
    wrs[i].chain_next = 99;
  }
  auto c = req_chaining(wrs, 4);
  EXPECT_EQ(c[0].chain_next, WrId{11});
  EXPECT_EQ(c[1].chain_next, WrId{12});
  EXPECT_FALSE(c[2].chain_next.has_value());
  EXPECT_THROW(req_chaining(wrs, 2), ContractViolation);
  wrs[1].qp = 2;
  EXPECT_THROW(req_chaining(wrs, 4), ContractViolation);
}

TEST(MergeEngine, ContiguousBurstBecomesOneWr) {
  Stack s(policy(BatchMode::kHybrid));
  std::vector<DataRequest> rs;
  for (ReqId i = 0; i < 8; ++i) rs.push_back(req(i, 0, i * 4096));
  s.submit_at(0, rs);
  s.sim.run();
  ASSERT_EQ(s.batches.size(), 1u);
  EXPECT_EQ(s.batches[0].merges, 7u);
  ASSERT_EQ(s.batches[0].segments.size(), 1u);
  EXPECT_EQ(s.batches[0].segments[0].covers.size(), 8u);
  EXPECT_EQ(s.batches[0].segments[0].bytes(), 8 * 4096u);
  EXPECT_EQ(s.completed.size(), 8u);
  EXPECT_EQ(s.sim.metrics().counter(metric::kWqePosted), 1u);
}

TEST(MergeEngine, DoorbellChainsPerNode) {
  Stack s(policy(BatchMode::kDoorbell));
  std::vector<DataRequest> rs;
  for (ReqId i = 0; i < 8; ++i) rs.push_back(req(i, static_cast<std::uint16_t>(i % 2), i * 4096));
  s.submit_at(0, rs);
  s.sim.run();
  auto& m = s.sim.metrics();
  EXPECT_EQ(m.counter(metric::kWqePosted), 8u);
  EXPECT_EQ(m.counter(metric::kMmio), 2u);  // one doorbell per node
  EXPECT_EQ(m.counter(metric::kDmaRead), 6u);
  EXPECT_EQ(m.counter(metric::kMerges), 0u);
  EXPECT_EQ(s.completed.size(), 8u);
}

TEST(MergeEngine, SingleModePostsEachRequest) {
  Stack s(policy(BatchMode::kSingle));
  std::vector<DataRequest> rs;
  for (ReqId i = 0; i < 8; ++i) rs.push_back(req(i, 0, i * 4096));
  s.submit_at(0, rs);
  s.sim.run();
  EXPECT_EQ(s.sim.metrics().counter(metric::kMmio), 8u);
  EXPECT_EQ(s.sim.metrics().counter(metric::kDmaRead), 0u);
  EXPECT_EQ(s.completed.size(), 8u);
}

TEST(MergeEngine, EveryDequeueCountsTowardChainLimit) {
  Stack s(policy(BatchMode::kHybrid, 4));
  std::vector<DataRequest> rs;
  for (ReqId i = 0; i < 10; ++i) rs.push_back(req(i, 0, i * 4096));  // all mergeable
  s.submit_at(0, rs);
  s.sim.run();
  std::vector<std::size_t> sizes;
  for (const auto& b : s.batches) {
    std::size_t n = 0;
    for (const auto& w : b.segments) n += w.covers.size();
    sizes.push_back(n);
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(s.completed.size(), 10u);
}

TEST(MergeEngine, SparseArrivalsPostAlone) {
  Stack s(policy(BatchMode::kHybrid));
  for (ReqId i = 0; i < 6; ++i) s.submit_at(i * 100_us, {req(i, 0, i * 4096)});
  s.sim.run();
  ASSERT_EQ(s.batches.size(), 6u);
  for (const auto& b : s.batches) {
    EXPECT_EQ(b.segments.size(), 1u);
    EXPECT_EQ(b.merges, 0u);
  }
}

TEST(MergeEngine, WindowBoundsInFlightBytes) {
  Stack s(policy(BatchMode::kDoorbell), 16384);
  std::vector<DataRequest> rs;
  for (ReqId i = 0; i < 40; ++i) rs.push_back(req(i, static_cast<std::uint16_t>(i % 2), i * 65536));
  s.submit_at(0, rs);
  s.sim.run();
  EXPECT_EQ(s.completed.size(), 40u);
  EXPECT_LE(s.reg.max_observed(), 16384u);
  EXPECT_EQ(s.reg.in_flight_bytes(), 0u);
  EXPECT_LE(s.sim.metrics().gauge(metric::kInFlightBytes).max(), 16384);
  for (const auto& b : s.batches) EXPECT_LE(b.segments.size(), 4u);
}

TEST(MergeEngine, ReadsAndWritesUseSeparateQueues) {
  Stack s(policy(BatchMode::kHybrid));
  s.submit_at(0, {req(0, 0, 0, 4096, Direction::kRead), req(1, 0, 4096, 4096, Direction::kWrite),
                  req(2, 0, 8192, 4096, Direction::kRead)});
  s.sim.run();
  EXPECT_EQ(s.completed.size(), 3u);
  for (const auto& b : s.batches) {
    for (const auto& w : b.segments) EXPECT_EQ(w.covers.size(), 1u);  // 0 and 2 are not adjacent
  }
}
