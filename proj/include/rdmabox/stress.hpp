#pragma once

// Real-thread stress of the merge queue token protocol and the window
// regulator. Producers run the enqueue-then-try-token loop; whoever holds the
// token paces, drains up to max_chain requests and hands the batch to
// completer threads, which release the window.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "rdmabox/admission.hpp"
#include "rdmabox/batching.hpp"

namespace rdmabox {

struct StressConfig {
  std::uint32_t producers = 8;
  std::uint32_t completers = 2;
  std::uint64_t ops = 1'000'000;
  std::uint64_t window_bytes = 256 * 1024;
  std::uint64_t fragment_bytes = 4096;
  std::uint32_t max_chain = 16;
  std::uint64_t seed = 1;
};

struct StressResult {
  std::uint64_t enqueued = 0;
  std::uint64_t completed = 0;
  std::uint64_t lost = 0;
  std::uint64_t duplicated = 0;
  std::uint64_t batches = 0;
  std::uint64_t adjacent_pairs = 0;
  std::uint64_t max_in_flight = 0;
  bool window_violated = false;
  bool ok() const { return lost == 0 && duplicated == 0 && completed == enqueued && !window_violated; }
};

namespace detail {

class BatchChannel {
 public:
  void push(std::vector<DataRequest> b) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(b));
    }
    cv_.notify_one();
  }
  // Empty result means closed and drained.
  std::vector<DataRequest> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return {};
    auto b = std::move(q_.front());
    q_.pop_front();
    return b;
  }
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<DataRequest>> q_;
  bool closed_ = false;
};

}  // namespace detail

inline StressResult run_stress(const StressConfig& cfg) {
  require(cfg.producers >= 1 && cfg.completers >= 1 && cfg.max_chain >= 1, "stress: bad thread counts");
  require(cfg.window_bytes >= 4 * cfg.fragment_bytes, "stress: window must hold the largest request");
  ConcurrentMergeQueue<DataRequest> queue;
  ConcurrentRegulator regulator(cfg.window_bytes, cfg.fragment_bytes);
  detail::BatchChannel channel;
  std::vector<std::atomic<std::uint8_t>> seen(cfg.ops);
  std::atomic<std::uint64_t> batches{0}, adjacent{0}, completed{0};

  auto drain = [&] {
    while (auto front = queue.peek()) {
      regulator.acquire(front->len);
      // Only the token holder dequeues, so the peeked request is still first.
      std::vector<DataRequest> batch{*queue.try_dequeue()};
      while (batch.size() < cfg.max_chain) {
        auto next = queue.peek();
        if (!next || !regulator.try_acquire(next->len)) break;
        batch.push_back(*queue.try_dequeue());
        if (merge_check(batch[batch.size() - 2], batch.back()) == MergeRelation::kAdjacent) {
          adjacent.fetch_add(1, std::memory_order_relaxed);
        }
      }
      batches.fetch_add(1, std::memory_order_relaxed);
      channel.push(std::move(batch));
    }
  };
  auto req_msg = [&](DataRequest r) {
    queue.enqueue(r);
    // Re-check after releasing so a request enqueued between the holder's
    // last peek and its release is never stranded.
    do {
      if (!queue.try_acquire_token()) return;
      drain();
      queue.release_token();
    } while (!queue.empty());
  };

  std::vector<std::thread> completers;
  for (std::uint32_t c = 0; c < cfg.completers; ++c) {
    completers.emplace_back([&] {
      for (auto b = channel.pop(); !b.empty(); b = channel.pop()) {
        for (const auto& r : b) {
          seen[r.req_id].fetch_add(1, std::memory_order_relaxed);
          regulator.release(r.len);
          completed.fetch_add(1, std::memory_order_relaxed);
        }
      }
    });
  }

  std::vector<std::thread> producers;
  for (std::uint32_t p = 0; p < cfg.producers; ++p) {
    producers.emplace_back([&, p] {
      std::mt19937_64 rng(cfg.seed * 6364136223846793005ull + p);
      std::uniform_int_distribution<std::uint32_t> pages(1, 4);
      std::uniform_int_distribution<std::uint32_t> coin(0, 3);
      std::uint64_t addr = 0;
      for (std::uint64_t id = p; id < cfg.ops; id += cfg.producers) {
        const std::uint64_t len = pages(rng) * cfg.fragment_bytes;
        if (coin(rng) != 0) addr = (rng() % 4096) * 4 * cfg.fragment_bytes;
        DataRequest r{id, Direction::kWrite, NodeId{static_cast<std::uint16_t>(p % 2)}, addr, len, 0,
                      static_cast<ActorId>(p)};
        addr += len;
        req_msg(r);
      }
    });
  }
  for (auto& t : producers) t.join();
  while (completed.load() < cfg.ops) std::this_thread::yield();
  channel.close();
  for (auto& t : completers) t.join();

  StressResult out;
  out.enqueued = cfg.ops;
  out.completed = completed.load();
  for (const auto& s : seen) {
    const auto v = s.load();
    if (v == 0) ++out.lost;
    if (v > 1) out.duplicated += v - 1;
  }
  out.batches = batches.load();
  out.adjacent_pairs = adjacent.load();
  out.max_in_flight = regulator.max_observed();
  out.window_violated = regulator.violated() || out.max_in_flight > cfg.window_bytes;
  return out;
}

}  // namespace rdmabox
