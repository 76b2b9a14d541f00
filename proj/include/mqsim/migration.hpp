#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mqsim/address_space.hpp"
#include "mqsim/admission.hpp"
#include "mqsim/cost_model.hpp"
#include "mqsim/types.hpp"

namespace mqsim {

enum class MigrationMode { Thread, IpiHandler };

enum class JobState { Requested, Admitted, CopyingTss, CopyingPde, Finalizing, Completed, Rejected, Aborted };

constexpr std::string_view to_string(MigrationMode m) { return m == MigrationMode::Thread ? "thread" : "ipi-handler"; }

constexpr std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Requested: return "requested";
    case JobState::Admitted: return "admitted";
    case JobState::CopyingTss: return "copying-tss";
    case JobState::CopyingPde: return "copying-pde";
    case JobState::Finalizing: return "finalizing";
    case JobState::Completed: return "completed";
    case JobState::Rejected: return "rejected";
    case JobState::Aborted: return "aborted";
  }
  return "unknown";
}

// One unit of monitor-mode copy work; a preemption point follows each.
struct CopyAtom {
  enum class Kind { Tss, Pde, Bind };
  Kind kind = Kind::Tss;
  std::int64_t index = 0;
  Tick cost = 0;
};

inline std::vector<CopyAtom> plan_copy(const AddressSpace& as, const CostModel& cost, Tick pde_extra_delay) {
  std::vector<CopyAtom> plan;
  plan.reserve(static_cast<std::size_t>(as.tss_count() + as.pde_count + 1));
  for (std::int64_t i = 0; i < as.tss_count(); ++i) plan.push_back({CopyAtom::Kind::Tss, i, cost.tss_copy_cost});
  for (std::int64_t k = 0; k < as.pde_count; ++k) {
    Tick c = as.pages_in_pde(k) * cost.page_copy_cache + cost.pde_walk_cost + pde_extra_delay;
    plan.push_back({CopyAtom::Kind::Pde, k, c});
  }
  // Zero-cost atom: the point right before the address space is bound.
  plan.push_back({CopyAtom::Kind::Bind, 0, 0});
  return plan;
}

struct MigrationJob {
  JobId id;
  SandboxId source, destination;
  AddressSpaceId address_space;
  VcpuId vcpu;
  MigrationMode mode = MigrationMode::Thread;
  JobState state = JobState::Requested;
  std::int64_t pde_progress = -1;  // last PDE copied

  Tick pde_extra_delay = 0;
  Tick delta_s_worst = 0;
  Tick delta_s_actual = 0;  // copy work plus monitor exits/entries
  Tick overhead_total = 0;  // scheduling overhead charged to the thread
  Tick budget_used_this_period = 0;
  Tick E_s = 0;
  Tick tsc_s = 0;
  Tick tsc_d = 0;
  Tick delta_adj = 0;
  Tick requested_at = 0;  // true time
  Tick admitted_at = 0;
  Tick completed_at = 0;
  std::int64_t activations = 0;
  Tick max_overrun = 0;
  Tick C_m = 0, T_m = 0;
  bool criterion_ok = false;
  AdmissionVerdict verdict;

  // Snapshot of the address space at request time.
  std::int64_t pages_at_request = 0;
  std::int64_t tss_at_request = 0;

  std::vector<CopyAtom> plan;
  std::size_t next_atom = 0;

  bool in_flight() const {
    return state != JobState::Completed && state != JobState::Rejected && state != JobState::Aborted;
  }

  // Enforces requested -> admitted -> copying-tss -> copying-pde(k) ->
  // finalizing -> completed, with rejected only from requested.
  void advance(JobState next, std::int64_t pde = -1) {
    auto bad = [&] {
      throw SimError(ErrorCode::ValidationError, std::string("illegal migration transition ") +
                                                     std::string(to_string(state)) + " -> " +
                                                     std::string(to_string(next)));
    };
    switch (next) {
      case JobState::Admitted:
      case JobState::Rejected:
        if (state != JobState::Requested) bad();
        break;
      case JobState::CopyingTss:
        if (state != JobState::Admitted && state != JobState::CopyingTss) bad();
        break;
      case JobState::CopyingPde:
        if (state != JobState::Admitted && state != JobState::CopyingTss && state != JobState::CopyingPde) bad();
        if (pde <= pde_progress) bad();
        pde_progress = pde;
        break;
      case JobState::Finalizing:
        if (state != JobState::Admitted && state != JobState::CopyingTss && state != JobState::CopyingPde) bad();
        break;
      case JobState::Completed:
        if (state != JobState::Finalizing) bad();
        break;
      case JobState::Aborted:
        if (!in_flight()) bad();
        break;
      case JobState::Requested:
        bad();
    }
    state = next;
  }
};

}  // namespace mqsim
