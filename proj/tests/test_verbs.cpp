#include <gtest/gtest.h>

#include <thread>
#include <vector>

#include "rdmabox/verbs.hpp"

using namespace rdmabox;

namespace {
WorkCompletion wc(WrId id) {
  WorkCompletion w;
  w.wr_id = id;
  return w;
}
}  // namespace

TEST(CompletionQueue, ArmedEmptyQueueInterruptsOnNextPush) {
  CompletionQueue cq(0, 8);
  int irq = 0;
  cq.set_interrupt_handler([&] { ++irq; });
  cq.request_notify();
  EXPECT_EQ(irq, 0);
  EXPECT_TRUE(cq.notify_armed());
  cq.push(wc(1));
  EXPECT_EQ(irq, 1);
  EXPECT_FALSE(cq.notify_armed());
  cq.push(wc(2));  // one-shot: not re-raised
  EXPECT_EQ(irq, 1);
}

TEST(CompletionQueue, ArmingNonEmptyQueueRaisesImmediately) {
  CompletionQueue cq(0, 8);
  int irq = 0;
  cq.set_interrupt_handler([&] { ++irq; });
  cq.push(wc(1));
  EXPECT_EQ(irq, 0);
  cq.request_notify();
  EXPECT_EQ(irq, 1);
  EXPECT_FALSE(cq.notify_armed());
}

TEST(CompletionQueue, UnarmedPushDoesNotInterrupt) {
  CompletionQueue cq(0, 8);
  int irq = 0;
  cq.set_interrupt_handler([&] { ++irq; });
  for (WrId i = 0; i < 5; ++i) cq.push(wc(i));
  EXPECT_EQ(irq, 0);
}

TEST(CompletionQueue, PollIsFifoAndBounded) {
  CompletionQueue cq(0, 8);
  for (WrId i = 0; i < 5; ++i) cq.push(wc(i));
  auto a = cq.poll(3);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].wr_id, 0u);
  EXPECT_EQ(a[2].wr_id, 2u);
  auto b = poll_cq(cq, 16);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].wr_id, 4u);
  EXPECT_TRUE(cq.poll(1).empty());
  EXPECT_THROW(cq.poll(0), ContractViolation);
}

TEST(CompletionQueue, OverflowIsAContractViolation) {
  CompletionQueue cq(0, 2);
  cq.push(wc(0));
  cq.push(wc(1));
  EXPECT_THROW(cq.push(wc(2)), ContractViolation);
}

TEST(QueuePair, TracksOutstandingAndWakesWaitersInOrder) {
  CompletionQueue cq(0, 4);
  QueuePair qp(1, NodeId{2}, 4, &cq);
  qp.on_posted(3);
  EXPECT_FALSE(qp.has_room(2));
  std::vector<int> woke;
  qp.wait_for_room(2, [&] { woke.push_back(1); });
  qp.wait_for_room(1, [&] { woke.push_back(2); });  // fits, but must not overtake
  EXPECT_TRUE(woke.empty());
  qp.on_reaped();
  EXPECT_EQ(woke, (std::vector<int>{1, 2}));
  EXPECT_THROW(qp.on_posted(5), ContractViolation);
  EXPECT_THROW(qp.wait_for_room(5, [] {}), ContractViolation);
}

TEST(QueuePair, ReapWithoutPostIsAViolation) {
  CompletionQueue cq(0, 4);
  QueuePair qp(1, NodeId{0}, 4, &cq);
  EXPECT_THROW(qp.on_reaped(), ContractViolation);
}

TEST(MemoryRegion, ContainsHandlesEdges) {
  MemoryRegion mr{1, 1000, 100, MrKind::kDynamic, AddressSpace::kUser, 0};
  EXPECT_TRUE(mr.contains(1000, 100));
  EXPECT_TRUE(mr.contains(1099, 1));
  EXPECT_FALSE(mr.contains(1099, 2));
  EXPECT_FALSE(mr.contains(999, 1));
  EXPECT_FALSE(mr.contains(1000, 101));
}

TEST(MessagePool, ContiguousSpansAndFifoWaiters) {
  MessagePool pool(MemoryRegion{1, 0, 4 * 4096, MrKind::kPreRegistered, AddressSpace::kUser, 0}, 4096);
  EXPECT_EQ(pool.slots(), 4u);
  EXPECT_EQ(pool.slots_for(1), 1u);
  EXPECT_EQ(pool.slots_for(8193), 3u);
  auto a = pool.try_acquire(2);
  auto b = pool.try_acquire(1);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->first, 0u);
  EXPECT_EQ(b->first, 2u);
  EXPECT_FALSE(pool.try_acquire(2));
  std::vector<PoolSpan> got;
  pool.acquire_or_wait(2, [&](PoolSpan s) { got.push_back(s); });
  pool.acquire_or_wait(1, [&](PoolSpan s) { got.push_back(s); });  // queued behind the head
  EXPECT_TRUE(got.empty());
  pool.release(*a);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].first, 0u);
  EXPECT_EQ(got[1].first, 3u);
  EXPECT_EQ(pool.in_use(), 4u);
  pool.release(*b);
  EXPECT_THROW(pool.release(*b), ContractViolation);
}

TEST(MessagePool, SgeAddressesFollowSlots) {
  MessagePool pool(MemoryRegion{7, 1 << 20, 8 * 512, MrKind::kPreRegistered, AddressSpace::kUser, 0}, 512);
  auto sge = pool.sge_for(PoolSpan{3, 2}, 700);
  EXPECT_EQ(sge.local_addr, (1u << 20) + 3 * 512);
  EXPECT_EQ(sge.mr_ref, 7u);
  EXPECT_TRUE(sge.needs_translation);
}

TEST(MessagePool, BlockingAcquireAcrossThreads) {
  MessagePool pool(MemoryRegion{1, 0, 4 * 64, MrKind::kPreRegistered, AddressSpace::kUser, 0}, 64);
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t) {
    ts.emplace_back([&] {
      for (int i = 0; i < 2000; ++i) pool.release(pool.acquire_blocking(1 + (i % 2)));
    });
  }
  for (auto& t : ts) t.join();
  EXPECT_EQ(pool.in_use(), 0u);
}
