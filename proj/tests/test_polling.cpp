#include <gtest/gtest.h>

#include <memory>

#include "rdmabox/polling.hpp"

using namespace rdmabox;

namespace {

struct Rig {
  Simulator sim;
  HostCpu cpu;
  Nic nic{sim, NicConfig{}};
  Session session;
  std::unique_ptr<Poller> poller;
  WrId next = 1;

  Rig(PollingStrategy st, std::uint32_t cpus = 8)
      : cpu(sim, cpus), session(sim, nic, SessionConfig{1, 1, 1024, 0, AddressSpace::kKernel, 4096, 4, {}}) {
    poller = std::make_unique<Poller>(sim, cpu, session, cq(), st, PollCosts{});
    poller->start();
  }

  CompletionQueue& cq() { return *session.cqs().front(); }

  // Lands `n` completions on the CQ at time t, all in one event.
  void burst(SimTime t, std::size_t n) {
    sim.schedule_at(t, EventKind::kCompletionDelivery, [this, n] {
      session.qp(0).on_posted(n);
      for (std::size_t i = 0; i < n; ++i) {
        WorkCompletion wc;
        wc.wr_id = next++;
        wc.qp = 0;
        cq().push(wc);
      }
    });
  }

  std::uint64_t interrupts() const { return sim.metrics().counter(metric::kInterrupts); }
};

}  // namespace

TEST(EventTriggered, OneInterruptPerCompletion) {
  Rig r(PollingStrategy::event_triggered());
  r.burst(0, 5);
  r.sim.run();
  EXPECT_EQ(r.poller->handled(), 5u);
  EXPECT_EQ(r.interrupts(), 5u);
  for (const auto& e : r.poller->entries()) EXPECT_EQ(e.wc_polled, 1u);
}

TEST(EventBatch, BurstWithinBudgetTakesOneInterrupt) {
  Rig r(PollingStrategy::event_batch(16));
  r.burst(0, 16);
  r.sim.run();
  EXPECT_EQ(r.interrupts(), 1u);
  EXPECT_EQ(r.poller->handled(), 16u);
  EXPECT_EQ(r.poller->mode(), PollerMode::kArmedIdle);
}

TEST(EventBatch, TwiceTheBudgetTakesTwoInterrupts) {
  Rig r(PollingStrategy::event_batch(16));
  r.burst(0, 32);
  r.sim.run();
  EXPECT_EQ(r.interrupts(), 2u);
  ASSERT_EQ(r.poller->entries().size(), 2u);
  EXPECT_EQ(r.poller->entries()[0].wc_polled, 16u);
  EXPECT_EQ(r.poller->entries()[1].wc_polled, 16u);
}

TEST(Adaptive, DrainsLargeCqWithoutExtraInterrupts) {
  Rig r(PollingStrategy::adaptive(16, 120));
  r.burst(0, 40);
  r.sim.run();
  EXPECT_EQ(r.interrupts(), 1u);
  ASSERT_EQ(r.poller->entries().size(), 1u);
  EXPECT_EQ(r.poller->entries()[0].wc_polled, 40u);
  EXPECT_EQ(r.sim.metrics().counter("poll_calls"), 3u + 1u);  // 16,16,8 then the first empty poll
  EXPECT_EQ(r.poller->empty_polls(), 121u);
  EXPECT_EQ(r.poller->retry(), 120u);
  EXPECT_EQ(r.poller->mode(), PollerMode::kArmedIdle);
}

TEST(Adaptive, SpinCatchesArrivalInsideRetryWindow) {
  Rig r(PollingStrategy::adaptive(16, 120));
  r.burst(0, 1);
  // First WC handled by ~5.4us; the spin then covers 120 polls of 80ns, to ~15us.
  r.burst(10_us, 1);
  r.sim.run();
  EXPECT_EQ(r.interrupts(), 1u);
  EXPECT_EQ(r.poller->handled(), 2u);
}

TEST(Adaptive, ArmsAfterRetryBudgetAndInterruptsAgain) {
  Rig r(PollingStrategy::adaptive(16, 10));
  r.burst(0, 1);
  r.burst(1_ms, 1);
  r.sim.run();
  EXPECT_EQ(r.interrupts(), 2u);
  EXPECT_EQ(r.poller->handled(), 2u);
}

TEST(Adaptive, SpinMatchesPollByPollCount) {
  // One WC, then the spin: the empty polls before arming are exactly
  // max_retry + 1, the same as iterating poll by poll.
  for (std::uint32_t mr : {0u, 1u, 7u, 50u}) {
    Rig r(PollingStrategy::adaptive(16, mr));
    r.burst(0, 1);
    r.sim.run();
    EXPECT_EQ(r.poller->empty_polls(), mr + 1u) << "max_retry=" << mr;
    EXPECT_EQ(r.interrupts(), 1u);
  }
}

// Adaptive with max_retry = 0 is not the same machine as EventBatch: it keeps
// polling after a full batch, EventBatch re-arms and takes another interrupt.
TEST(Adaptive, ZeroRetryDivergesFromEventBatchOnDeepCq) {
  Rig a(PollingStrategy::adaptive(16, 0));
  Rig b(PollingStrategy::event_batch(16));
  a.burst(0, 32);
  b.burst(0, 32);
  a.sim.run();
  b.sim.run();
  EXPECT_EQ(a.interrupts(), 1u);
  EXPECT_EQ(b.interrupts(), 2u);
  EXPECT_EQ(a.poller->handled(), 32u);
  EXPECT_EQ(b.poller->handled(), 32u);
}

TEST(Adaptive, ZeroRetryMatchesEventBatchOnShallowBursts) {
  Rig a(PollingStrategy::adaptive(16, 0));
  Rig b(PollingStrategy::event_batch(16));
  for (int i = 0; i < 20; ++i) {
    a.burst(i * 50_us, 5);
    b.burst(i * 50_us, 5);
  }
  a.sim.run();
  b.sim.run();
  ASSERT_EQ(a.poller->entries().size(), b.poller->entries().size());
  for (std::size_t i = 0; i < a.poller->entries().size(); ++i) {
    EXPECT_EQ(a.poller->entries()[i].at, b.poller->entries()[i].at);
    EXPECT_EQ(a.poller->entries()[i].wc_polled, b.poller->entries()[i].wc_polled);
  }
}

TEST(Hybrid, OneInterruptPerBurst) {
  Rig r(PollingStrategy::hybrid());
  r.burst(0, 100);
  r.burst(1_ms, 3);
  r.sim.run();
  EXPECT_EQ(r.interrupts(), 2u);
  ASSERT_EQ(r.poller->entries().size(), 2u);
  EXPECT_EQ(r.poller->entries()[0].wc_polled, 100u);
}

TEST(Hybrid, NoLostWakeupDuringFinalEmptyPoll) {
  Rig r(PollingStrategy::hybrid());
  r.burst(0, 1);
  // Interrupt + context switch (5us), poll (80ns), handle (300ns): the empty
  // poll runs over [5380, 5460). A WC landing inside it must not be stranded.
  r.burst(5400, 1);
  r.sim.run();
  EXPECT_EQ(r.poller->handled(), 2u);
  EXPECT_EQ(r.interrupts(), 2u);
  EXPECT_TRUE(r.cq().empty());
}

TEST(Busy, NeverInterruptsAndBurnsWallClock) {
  Rig r(PollingStrategy::busy());
  r.burst(10_us, 4);
  r.burst(200_us, 4);
  r.sim.run_until(1_ms);
  EXPECT_EQ(r.interrupts(), 0u);
  EXPECT_EQ(r.poller->handled(), 8u);
  EXPECT_EQ(r.poller->cpu_busy_time(1_ms), 1_ms);
  EXPECT_EQ(r.cpu.runnable(), 1u);
}

TEST(Busy, SpinningStretchesOtherWork) {
  Rig r(PollingStrategy::busy(), 1);
  // One cpu already held by the spinner: 1us of work takes 2us.
  EXPECT_EQ(r.cpu.run(1_us, nullptr), 2_us);
}

TEST(PollingStrategy, Validation) {
  PollingStrategy s = PollingStrategy::event_batch(0);
  EXPECT_THROW(s.validate(), ContractViolation);
  s = PollingStrategy::adaptive(0, 4);
  EXPECT_THROW(s.validate(), ContractViolation);
  EXPECT_TRUE(PollingStrategy::shared_cq(2).spins_forever());
  EXPECT_FALSE(PollingStrategy::adaptive().spins_forever());
}
