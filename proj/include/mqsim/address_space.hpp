#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqsim/cost_model.hpp"
#include "mqsim/types.hpp"

namespace mqsim {

inline constexpr std::int64_t kPageBytes = 4096;
inline constexpr std::int64_t kMaxPdes = 1024;
inline constexpr std::int64_t kMaxAddressSpaceBytes = 4 * 1024 * 1024;

struct AddressSpace {
  AddressSpaceId id;
  std::int64_t pde_count = 0;
  std::int64_t total_pages = 0;
  std::vector<TaskId> task_controls;
  std::int64_t tss_limit = 8;
  SandboxId location;
  bool reachable = true;

  std::int64_t size_bytes() const { return total_pages * kPageBytes; }
  std::int64_t tss_count() const { return static_cast<std::int64_t>(task_controls.size()); }

  // Pages under PDE k: the first total_pages % pde_count entries hold one extra.
  std::int64_t pages_in_pde(std::int64_t k) const {
    if (pde_count == 0) return 0;
    std::int64_t base = total_pages / pde_count;
    return base + (k < total_pages % pde_count ? 1 : 0);
  }

  void validate() const {
    if (pde_count < 0 || pde_count > kMaxPdes) {
      throw SimError(ErrorCode::ValidationError, "pde_count must be in [0, 1024]");
    }
    if (total_pages < 0 || size_bytes() > kMaxAddressSpaceBytes) {
      throw SimError(ErrorCode::ValidationError, "address space exceeds 4 MB");
    }
    if (total_pages > 0 && pde_count == 0) {
      throw SimError(ErrorCode::ValidationError, "pages need at least one page directory entry");
    }
    if (tss_count() > tss_limit) {
      throw SimError(ErrorCode::ValidationError, "too many task records for the tss limit");
    }
  }
};

// Cache-disabled copy estimate used by the migration criterion.
inline Tick estimate_delta_s(const AddressSpace& as, const CostModel& cost, Tick pde_extra_delay = 0) {
  return as.total_pages * cost.page_copy_nocache + as.tss_count() * cost.tss_copy_cost +
         as.pde_count * (cost.pde_walk_cost + pde_extra_delay);
}

// Copy work with caches enabled: what the migration thread actually executes
// between preemption points, excluding monitor entry/exit and overhead.
inline Tick actual_copy_work(const AddressSpace& as, const CostModel& cost, Tick pde_extra_delay = 0) {
  return as.total_pages * cost.page_copy_cache + as.tss_count() * cost.tss_copy_cost +
         as.pde_count * (cost.pde_walk_cost + pde_extra_delay);
}

}  // namespace mqsim
