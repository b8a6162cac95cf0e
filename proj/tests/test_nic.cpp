#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdmabox/nic_model.hpp"

using namespace rdmabox;

namespace {

WorkRequest make_wr(WrId id, QpId qp, std::uint64_t len, MrId mr = 1, bool translate = true) {
  WorkRequest wr;
  wr.wr_id = id;
  wr.qp = qp;
  wr.sge_list.push_back(ScatterGatherEntry{0, len, mr, translate});
  wr.covers = {id};
  return wr;
}

struct Rig {
  Simulator sim;
  Nic nic;
  CompletionQueue cq{0, 1 << 16};
  explicit Rig(NicConfig c) : nic(sim, c) { nic.enable_logs(true); }
};

}  // namespace

TEST(NicConfig, RejectsMmioNotAboveDma) {
  NicConfig c;
  c.mmio_cost = c.dma_read_cost;
  EXPECT_THROW(c.validate(), ContractViolation);
}

TEST(Nic, ChainIntakeIsOneMmioPlusDmaPerExtraWqe) {
  NicConfig c;
  Rig r(c);
  std::vector<WorkRequest> chain;
  for (WrId i = 0; i < 5; ++i) chain.push_back(make_wr(i, 3, 64, 9));
  const SimTime intake = r.nic.accept_post(chain, r.cq);
  // cold QP context and one cold MPT entry
  EXPECT_EQ(intake, c.mmio_cost + 4 * c.dma_read_cost + 2 * c.cache_miss_refetch_cost);
  auto& m = r.sim.metrics();
  EXPECT_EQ(m.counter(metric::kMmio), 1u);
  EXPECT_EQ(m.counter(metric::kDmaRead), 4u);
  EXPECT_EQ(m.counter(metric::kWqePosted), 5u);

  // Same as five separate doorbells, minus what warm caches save.
  for (WrId i = 5; i < 10; ++i) r.nic.accept_post({make_wr(i, 3, 64, 9)}, r.cq);
  EXPECT_EQ(m.counter(metric::kMmio), 6u);
  EXPECT_EQ(m.counter(metric::kDmaRead), 4u);
  r.sim.run();
  EXPECT_EQ(r.cq.size(), 10u);
}

TEST(Nic, KernelSgesSkipTranslation) {
  Rig r(NicConfig{});
  r.nic.accept_post({make_wr(0, 0, 64, 42, false)}, r.cq);
  EXPECT_EQ(r.nic.post_log().back().mpt_misses, 0u);
  EXPECT_FALSE(r.nic.mpt_cache().contains(42));
}

TEST(Nic, WqeEvictionOracle) {
  // N single-WR posts land before the engine runs; an LRU of C slots keeps the
  // newest C, so exactly the first N-C must be fetched again.
  for (std::uint32_t cap : {1u, 4u, 16u, 31u}) {
    const std::uint32_t n = 32;
    NicConfig c;
    c.wqe_cache_slots = cap;
    Rig r(c);
    r.sim.schedule_at(0, EventKind::kPostArrival, [&] {
      for (WrId i = 0; i < n; ++i) r.nic.accept_post({make_wr(i, 0, 512)}, r.cq);
    });
    r.sim.run();
    ASSERT_EQ(r.nic.process_log().size(), n);
    for (const auto& p : r.nic.process_log()) {
      EXPECT_EQ(p.wqe_refetched, p.wr_id < n - cap) << "cap=" << cap << " wr=" << p.wr_id;
    }
    EXPECT_EQ(r.sim.metrics().counter("wqe_cache_miss"), n - cap);
  }
}

TEST(Nic, ProcessCostDecomposes) {
  NicConfig c;
  c.wqe_cache_slots = 3;
  Rig r(c);
  r.sim.schedule_at(0, EventKind::kPostArrival, [&] {
    std::vector<WorkRequest> chain;
    for (WrId i = 0; i < 4; ++i) chain.push_back(make_wr(i, 0, 1000 * (i + 1)));
    r.nic.accept_post(chain, r.cq);
    for (WrId i = 4; i < 8; ++i) r.nic.accept_post({make_wr(i, 1, 4096)}, r.cq);
  });
  r.sim.run();
  SimTime share_sum = 0, prev_finish = 0, charged = 0;
  for (const auto& p : r.nic.process_log()) {
    const SimTime oracle = p.intake_share + c.per_wqe_process_cost + c.wire_cost(p.bytes) +
                           (p.wqe_refetched ? c.cache_miss_refetch_cost : 0);
    EXPECT_EQ(p.finish - p.start, oracle);
    EXPECT_GE(p.start, prev_finish);  // one serial engine
    prev_finish = p.finish;
    share_sum += p.intake_share;
    charged += p.finish - p.start;
  }
  SimTime intake_sum = 0;
  for (const auto& post : r.nic.post_log()) intake_sum += post.intake_cost;
  EXPECT_EQ(share_sum, intake_sum);
  EXPECT_EQ(charged, r.nic.total_charged());
  EXPECT_EQ(r.nic.inflight(), 0u);
  EXPECT_EQ(r.sim.metrics().gauge(metric::kInFlightBytes).value(), 0);
}

TEST(Nic, CompletionsCarryCoversInPostOrder) {
  Rig r(NicConfig{});
  r.nic.accept_post({make_wr(7, 0, 64), make_wr(8, 0, 64)}, r.cq);
  r.sim.run();
  auto wcs = r.cq.poll(8);
  ASSERT_EQ(wcs.size(), 2u);
  EXPECT_EQ(wcs[0].covers, std::vector<ReqId>{7});
  EXPECT_EQ(wcs[1].covers, std::vector<ReqId>{8});
  EXPECT_LT(wcs[0].completed_at, wcs[1].completed_at);
}

TEST(Nic, RejectsMixedQpChains) {
  Rig r(NicConfig{});
  EXPECT_THROW(r.nic.accept_post({make_wr(0, 0, 64), make_wr(1, 1, 64)}, r.cq), ContractViolation);
}

TEST(LruSet, EvictsLeastRecent) {
  LruSet<int> s(2);
  EXPECT_FALSE(s.touch(1));
  EXPECT_FALSE(s.touch(2));
  EXPECT_TRUE(s.touch(1));
  EXPECT_FALSE(s.touch(3));  // evicts 2
  EXPECT_TRUE(s.contains(1));
  EXPECT_FALSE(s.contains(2));
  EXPECT_EQ(s.evictions(), 1u);
}

TEST(MrCost, UserCrossoverMatchesClosedForm) {
  MrCostModel m;
  // reg(p) = base + per_page*p; copy(p) = ceil(p*4096*ps/1000). Solve for the
  // first integer page count where reg <= copy.
  const double copy_per_page = 4096.0 * static_cast<double>(m.memcpy_ps_per_byte) / 1000.0;
  const double p = static_cast<double>(m.user_reg_base) /
                   (copy_per_page - static_cast<double>(m.user_reg_per_page));
  auto pages = static_cast<std::uint64_t>(std::ceil(p));
  EXPECT_EQ(m.user_crossover(), pages * kPageSize);
  EXPECT_EQ(m.user_crossover(), 928_KiB);
  EXPECT_GT(mr_cost(m, AddressSpace::kUser, MrKind::kDynamic, 924_KiB),
            mr_cost(m, AddressSpace::kUser, MrKind::kPreRegistered, 924_KiB));
  EXPECT_LE(mr_cost(m, AddressSpace::kUser, MrKind::kDynamic, 928_KiB),
            mr_cost(m, AddressSpace::kUser, MrKind::kPreRegistered, 928_KiB));
}

TEST(MrCost, KernelRegistrationIsCheapAndPageGranular) {
  MrCostModel m;
  EXPECT_EQ(m.cost(AddressSpace::kKernel, MrKind::kDynamic, 1), m.kernel_reg_base + m.kernel_reg_per_page);
  EXPECT_EQ(m.cost(AddressSpace::kKernel, MrKind::kDynamic, 4097),
            m.kernel_reg_base + 2 * m.kernel_reg_per_page);
  EXPECT_LT(m.cost(AddressSpace::kKernel, MrKind::kDynamic, 128_KiB),
            m.cost(AddressSpace::kKernel, MrKind::kPreRegistered, 128_KiB));
  EXPECT_THROW(m.cost(AddressSpace::kUser, MrKind::kDynamic, 0), ContractViolation);
}
