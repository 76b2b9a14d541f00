#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <utility>

#include "mqsim/types.hpp"

namespace mqsim {

enum class EventKind {
  BudgetReplenishment,
  BudgetDepletion,
  TaskWakeup,
  IpiDelivery,
  IoCompletion,
  PreemptionPoint,
  SampleTick,
  StepComplete,
  MigrationTrigger,
  User,
};

constexpr std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::BudgetReplenishment: return "replenish";
    case EventKind::BudgetDepletion: return "deplete";
    case EventKind::TaskWakeup: return "wakeup";
    case EventKind::IpiDelivery: return "ipi";
    case EventKind::IoCompletion: return "io_complete";
    case EventKind::PreemptionPoint: return "preempt_point";
    case EventKind::SampleTick: return "sample";
    case EventKind::StepComplete: return "step_complete";
    case EventKind::MigrationTrigger: return "mig_trigger";
    case EventKind::User: return "user";
  }
  return "unknown";
}

enum class IpiType { User, MigrationRequest, MigrationComplete, MigrationReject };

struct EventPayload {
  VcpuId vcpu;
  TaskId task;
  JobId job;
  IpiType ipi = IpiType::User;
  SandboxId peer;   // IPI source
  Tick amount = 0;  // replenishment amount, generic value otherwise
  Tick local_time = 0;
};

struct SimEvent {
  Tick fire_at = 0;  // true time
  SandboxId sandbox;
  EventKind kind = EventKind::User;
  EventPayload payload;
  std::uint64_t seq = 0;  // assigned by the queue
};

using EventId = std::uint64_t;

// Global true-time event queue. Equal timestamps dispatch in posting order.
class EventQueue {
 public:
  Tick now() const { return now_; }
  bool empty() const { return events_.empty(); }
  std::size_t size() const { return events_.size(); }

  EventId post(SimEvent event) {
    if (event.fire_at < now_) {
      throw SimError(ErrorCode::PastTimestamp, "event at " + std::to_string(event.fire_at) +
                                                   " posted at " + std::to_string(now_));
    }
    event.seq = next_seq_++;
    Key key{event.fire_at, event.seq};
    index_.emplace(event.seq, event.fire_at);
    events_.emplace(key, std::move(event));
    return key.second;
  }

  bool cancel(EventId id) {
    auto it = index_.find(id);
    if (it == index_.end()) return false;
    events_.erase(Key{it->second, id});
    index_.erase(it);
    return true;
  }

  bool pending(EventId id) const { return index_.contains(id); }

  std::optional<Tick> next_time() const {
    if (events_.empty()) return std::nullopt;
    return events_.begin()->first.first;
  }

  // Removes the earliest event and advances the clock to its timestamp.
  SimEvent pop() {
    auto it = events_.begin();
    SimEvent ev = std::move(it->second);
    events_.erase(it);
    index_.erase(ev.seq);
    now_ = ev.fire_at;
    return ev;
  }

  void advance_to(Tick t) {
    if (t > now_) now_ = t;
  }

 private:
  using Key = std::pair<Tick, std::uint64_t>;
  std::map<Key, SimEvent> events_;
  std::unordered_map<std::uint64_t, Tick> index_;
  std::uint64_t next_seq_ = 0;
  Tick now_ = 0;
};

}  // namespace mqsim
