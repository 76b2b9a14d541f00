#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mqsim/event_queue.hpp"
#include "mqsim/types.hpp"

namespace mqsim {

enum class VcpuKind { Main, Io };

// Pending budget return, in the home sandbox's local time.
struct Replenishment {
  Tick at_local = 0;
  Tick amount = 0;
  EventId event = 0;  // owned by the simulation; 0 when not posted
};

// Budget state of one sporadic server.
//
// Each contiguous execution chunk that starts at local time a and consumes c
// posts a replenishment (a + T, c). If the chunk ends with the budget overdrawn
// by o, that replenishment is pushed back to a + T + o and the overdraft is
// carried as negative remaining budget, so every consumed tick comes back
// exactly once.
class SporadicServer {
 public:
  static constexpr std::size_t kMaxReplenishments = 8;

  SporadicServer() = default;
  SporadicServer(Tick capacity, Tick period) : capacity_(capacity), period_(period), remaining_(capacity) {}

  Tick capacity() const { return capacity_; }
  Tick period() const { return period_; }
  Tick remaining() const { return remaining_; }
  bool has_budget() const { return remaining_ > 0; }
  bool in_chunk() const { return in_chunk_; }
  Tick chunk_start() const { return chunk_start_; }
  Tick chunk_used() const { return chunk_used_; }
  const std::deque<Replenishment>& queue() const { return queue_; }
  std::deque<Replenishment>& queue() { return queue_; }

  Tick pending_total() const {
    Tick sum = 0;
    for (const auto& r : queue_) sum += r.amount;
    return sum;
  }

  void start_chunk(Tick now_local) {
    if (in_chunk_) return;
    in_chunk_ = true;
    chunk_start_ = now_local;
    chunk_used_ = 0;
  }

  // `overrun_allowed` permits consumption past zero (non-preemptible work).
  void consume(Tick amount, bool overrun_allowed = false) {
    if (amount < 0) throw SimError(ErrorCode::OverConsume, "negative consumption");
    if (!overrun_allowed && amount > std::max<Tick>(remaining_, 0)) {
      throw SimError(ErrorCode::OverConsume, "consume " + std::to_string(amount) + " with " +
                                                 std::to_string(remaining_) + " remaining");
    }
    remaining_ -= amount;
    chunk_used_ += amount;
  }

  struct ChunkResult {
    std::optional<Replenishment> added;
    std::optional<EventId> merged_away;  // event of the entry folded into its successor
    Tick overrun = 0;
  };

  // Closes the current chunk and queues its replenishment.
  ChunkResult end_chunk() {
    ChunkResult out;
    if (!in_chunk_) return out;
    in_chunk_ = false;
    if (chunk_used_ == 0) return out;
    out.overrun = remaining_ < 0 ? -remaining_ : 0;
    Replenishment r{chunk_start_ + period_ + out.overrun, chunk_used_, 0};
    if (queue_.size() >= kMaxReplenishments) {
      // Fold the oldest entry into the next one; budget only moves later.
      Replenishment oldest = queue_.front();
      queue_.pop_front();
      queue_.front().amount += oldest.amount;
      if (oldest.event != 0) out.merged_away = oldest.event;
    }
    // Overrun shifts can in principle reorder entries; keep the queue sorted.
    auto pos = std::upper_bound(queue_.begin(), queue_.end(), r.at_local,
                                [](Tick t, const Replenishment& e) { return t < e.at_local; });
    queue_.insert(pos, r);
    out.added = r;
    chunk_used_ = 0;
    return out;
  }

  // Removes the queued entry posted as `event` without crediting it.
  Tick withdraw(EventId event) {
    auto it = std::find_if(queue_.begin(), queue_.end(), [&](const Replenishment& r) { return r.event == event; });
    if (it == queue_.end()) throw SimError(ErrorCode::UnknownEntity, "unknown replenishment");
    Tick amount = it->amount;
    queue_.erase(it);
    return amount;
  }
  void credit(Tick amount) { remaining_ += amount; }

  // Applies the queued entry posted as `event`; returns the amount.
  Tick replenish(EventId event) {
    Tick amount = withdraw(event);
    credit(amount);
    return amount;
  }

  // Records the event posted for the entry added by the last end_chunk().
  void bind_event(EventId event) {
    for (auto& e : queue_) {
      if (e.event == 0) {
        e.event = event;
        return;
      }
    }
  }

  // Moves every pending replenishment by `delta` local ticks.
  void shift(Tick delta) {
    for (auto& r : queue_) r.at_local += delta;
  }

 private:
  Tick capacity_ = 0;
  Tick period_ = 0;
  Tick remaining_ = 0;
  std::deque<Replenishment> queue_;
  bool in_chunk_ = false;
  Tick chunk_start_ = 0;
  Tick chunk_used_ = 0;
};

// Rate-monotonic priority key; smaller runs first. The migration thread is
// pinned above every rate-monotonic slot.
struct PriorityKey {
  Tick period = kNever;
  std::int32_t id = 0;
  auto operator<=>(const PriorityKey&) const = default;

  static PriorityKey highest(std::int32_t id) { return {-1, id}; }
  static PriorityKey background(std::int32_t id) { return {kNever, id}; }
};

struct Vcpu {
  VcpuId id;
  std::string name;
  VcpuKind kind = VcpuKind::Main;
  SandboxId home;
  SporadicServer server;
  bool migration_thread = false;
  // Io VCPUs: inherited keys of outstanding requesters.
  std::multiset<PriorityKey> inherited;

  Vcpu() = default;
  Vcpu(VcpuId id_, std::string name_, VcpuKind kind_, Tick c, Tick t, SandboxId home_)
      : id(id_), name(std::move(name_)), kind(kind_), home(home_), server(c, t) {
    if (t <= 0 || c <= 0 || c > t) {
      throw SimError(ErrorCode::MalformedVcpu, name + ": require 0 < C <= T, got " + std::to_string(c) + "/" +
                                                   std::to_string(t));
    }
  }

  Tick C() const { return server.capacity(); }
  Tick T() const { return server.period(); }

  PriorityKey priority() const {
    if (migration_thread) return PriorityKey::highest(id.value);
    if (kind == VcpuKind::Main) return {T(), id.value};
    if (inherited.empty()) return PriorityKey::background(id.value);
    return *inherited.begin();
  }

  // Raises an I/O VCPU to the requester's slot; the best outstanding slot wins.
  void inherit_priority(const Vcpu& main) {
    if (kind != VcpuKind::Io) throw SimError(ErrorCode::NotIoVcpu, name + " is not an I/O VCPU");
    inherited.insert(main.priority());
  }

  void release_priority(const Vcpu& main) {
    if (kind != VcpuKind::Io) throw SimError(ErrorCode::NotIoVcpu, name + " is not an I/O VCPU");
    auto it = inherited.find(main.priority());
    if (it != inherited.end()) inherited.erase(it);
  }
};

}  // namespace mqsim
