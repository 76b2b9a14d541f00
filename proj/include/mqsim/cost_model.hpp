#pragma once

#include <string>

#include "mqsim/types.hpp"

namespace mqsim {

// Fixed costs of the modeled hardware operations. Values are ticks.
//
// The defaults reproduce the migration calibration used by the built-in
// experiments: a 200-page address space with one task record and 1024 page
// directory entries costs 5.4 ms to copy with caches disabled and 1.6 ms
// with caches enabled.
struct CostModel {
  Tick rdtsc_cost = 1;
  Tick ipi_cost = 100;
  Tick vmexit_cost = 1;
  Tick vmentry_cost = 1;
  Tick page_copy_nocache = 22;  // per page, worst case
  Tick page_copy_cache = 3;     // per page, observed
  Tick tss_copy_cost = 1000;    // per task record
  Tick pde_walk_cost = 0;       // per page directory entry
  // Scheduling and accounting work each time the migration thread is
  // dispatched. Charged to its budget but not to the copy, so the thread
  // never spends its whole budget copying.
  Tick migration_overhead = 1200;
  // Budget spent by a successful mailbox poll.
  Tick poll_cost = 10;

  void validate() const {
    auto non_negative = [](Tick v, const char* name) {
      if (v < 0) throw SimError(ErrorCode::ValidationError, std::string(name) + " must be >= 0");
    };
    non_negative(rdtsc_cost, "rdtsc_cost");
    non_negative(ipi_cost, "ipi_cost");
    non_negative(vmexit_cost, "vmexit_cost");
    non_negative(vmentry_cost, "vmentry_cost");
    non_negative(page_copy_nocache, "page_copy_nocache");
    non_negative(page_copy_cache, "page_copy_cache");
    non_negative(tss_copy_cost, "tss_copy_cost");
    non_negative(pde_walk_cost, "pde_walk_cost");
    non_negative(migration_overhead, "migration_overhead");
    non_negative(poll_cost, "poll_cost");
    if (page_copy_nocache < page_copy_cache) {
      throw SimError(ErrorCode::ValidationError, "page_copy_nocache must be >= page_copy_cache");
    }
  }

  bool operator==(const CostModel&) const = default;
};

}  // namespace mqsim
