#pragma once

// Session: pre-wired connections to every peer, the message pool, MR
// registration and the completion handler registry.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "rdmabox/nic_model.hpp"
#include "rdmabox/verbs.hpp"

namespace rdmabox {

struct SessionConfig {
  std::uint16_t peers = 1;
  std::uint32_t qps_per_node = 1;
  std::uint32_t send_queue_depth = 256;
  // 0 gives every QP its own CQ; m > 0 wires all QPs into m shared CQs.
  std::uint32_t shared_cqs = 0;
  AddressSpace space = AddressSpace::kKernel;
  std::uint64_t pool_slot_size = 128_KiB;
  std::uint32_t pool_slots = 1024;
  MrCostModel mr_costs;
};

struct Registration {
  MemoryRegion region;
  SimTime cost = 0;
};

using CompletionHandler = std::function<void(const WorkCompletion&)>;

class Session {
 public:
  Session(Simulator& sim, Nic& nic, SessionConfig cfg) : sim_(sim), nic_(nic), cfg_(cfg) {
    require(cfg.peers >= 1 && cfg.qps_per_node >= 1, "session needs at least one peer and one QP");
    const std::uint32_t total_qps = cfg.peers * cfg.qps_per_node;
    if (cfg.shared_cqs == 0) {
      for (std::uint32_t i = 0; i < total_qps; ++i) {
        cqs_.push_back(std::make_unique<CompletionQueue>(i, cfg.send_queue_depth, CqOwner::kPerQp));
      }
    } else {
      require(cfg.shared_cqs <= total_qps, "more shared CQs than queue pairs");
      for (std::uint32_t i = 0; i < cfg.shared_cqs; ++i) {
        std::uint32_t qps_here = total_qps / cfg.shared_cqs + (i < total_qps % cfg.shared_cqs ? 1 : 0);
        cqs_.push_back(std::make_unique<CompletionQueue>(i, std::size_t{cfg.send_queue_depth} * qps_here,
                                                         CqOwner::kShared));
      }
    }
    QpId next = 0;
    for (std::uint16_t n = 0; n < cfg.peers; ++n) {
      auto& list = peers_[NodeId{n}];
      for (std::uint32_t q = 0; q < cfg.qps_per_node; ++q, ++next) {
        CompletionQueue* cq = cqs_[cfg.shared_cqs == 0 ? next : next % cfg.shared_cqs].get();
        qps_.push_back(std::make_unique<QueuePair>(next, NodeId{n}, cfg.send_queue_depth, cq));
        list.push_back(qps_.back().get());
      }
      rr_[NodeId{n}] = 0;
    }
    MemoryRegion pool_region{next_mr_++, 1ull << 40, cfg.pool_slot_size * cfg.pool_slots,
                             MrKind::kPreRegistered, cfg.space, 0};
    pool_ = std::make_unique<MessagePool>(pool_region, cfg.pool_slot_size);
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const SessionConfig& config() const { return cfg_; }
  Simulator& sim() { return sim_; }
  Nic& nic() { return nic_; }
  MessagePool& mempool() { return *pool_; }
  const std::vector<std::unique_ptr<CompletionQueue>>& cqs() const { return cqs_; }
  const std::vector<std::unique_ptr<QueuePair>>& qps() const { return qps_; }
  QueuePair& qp(QpId id) { return *qps_.at(id); }

  const std::vector<QueuePair*>& peer(NodeId n) const {
    auto it = peers_.find(n);
    if (it == peers_.end()) throw ContractViolation("request targets an unknown node");
    return it->second;
  }

  // Round-robin over the node's queue pairs.
  QueuePair& next_qp(NodeId n) {
    const auto& list = peer(n);
    auto& i = rr_[n];
    QueuePair& q = *list[i % list.size()];
    ++i;
    return q;
  }

  WrId next_wr_id() { return next_wr_++; }

  // Registers a buffer. preMR means a copy into the pool region; dynMR creates
  // a fresh region over the caller's buffer. The returned cost is for the
  // caller to charge to its own CPU time.
  Registration register_mr(AddressSpace space, std::uint64_t len, MrKind kind, std::uint64_t base = 0) {
    require(len > 0, "register_mr requires len > 0");
    SimTime cost = cfg_.mr_costs.cost(space, kind, len);
    if (kind == MrKind::kPreRegistered) return Registration{pool_->region(), cost};
    return Registration{MemoryRegion{next_mr_++, base, len, MrKind::kDynamic, space, sim_.now()}, cost};
  }

  void register_handler(CompletionHandler h) { handlers_.push_back(std::move(h)); }
  bool has_handler() const { return !handlers_.empty(); }

  // The whole chain must sit on `qp` and fit in its send queue.
  void post_send(QueuePair& qp, std::vector<WorkRequest> chain) {
    require(has_handler(), "completion handler must be registered before the first post");
    require(!chain.empty(), "post_send with an empty chain");
    for (std::size_t i = 0; i < chain.size(); ++i) {
      require(chain[i].qp == qp.id(), "chain spans more than one queue pair");
      if (i + 1 < chain.size()) {
        require(chain[i].chain_next == chain[i + 1].wr_id, "broken chain link");
      } else {
        require(!chain[i].chain_next.has_value(), "chain tail links past the end");
      }
    }
    qp.on_posted(chain.size());
    nic_.accept_post(std::move(chain), qp.cq());
  }

  // Reaps one completion: frees its send-queue slot and pool span, then runs
  // the registered handlers.
  void handle(const WorkCompletion& wc) {
    if (wc.pool_span) pool_->release(*wc.pool_span);
    for (auto& h : handlers_) h(wc);
    qp(wc.qp).on_reaped();
  }

 private:
  Simulator& sim_;
  Nic& nic_;
  SessionConfig cfg_;
  std::vector<std::unique_ptr<CompletionQueue>> cqs_;
  std::vector<std::unique_ptr<QueuePair>> qps_;
  std::map<NodeId, std::vector<QueuePair*>> peers_;
  std::map<NodeId, std::size_t> rr_;
  std::unique_ptr<MessagePool> pool_;
  std::vector<CompletionHandler> handlers_;
  WrId next_wr_ = 1;
  MrId next_mr_ = 1;
};

}  // namespace rdmabox
