#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mqsim/simulation.hpp"

namespace mqsim {

struct LawViolation {
  std::string vcpu;
  Tick window_start = 0;
  Tick executed = 0;
  Tick limit = 0;
};

struct LawReport {
  std::vector<LawViolation> violations;
  std::int64_t windows_checked = 0;
  bool ok() const { return violations.empty(); }
};

// Largest uninterruptible stretch the migration thread can add past its
// budget: a dispatch's overhead and monitor transition plus its biggest atom.
inline Tick migration_overrun_allowance(const Simulation& sim) {
  const auto& c = sim.config().cost;
  Tick biggest = 0;
  for (const auto& job : sim.jobs()) {
    for (const auto& a : job.plan) biggest = std::max(biggest, a.cost);
  }
  return c.migration_overhead + c.vmexit_cost + c.vmentry_cost + biggest;
}

// Executed time of every Main VCPU within any window [s, s + T) must stay
// within C, plus one atom of overrun for the migration thread. The maximum
// over windows is attained with s at the start of an execution span.
inline LawReport scan_sliding_window(const Simulation& sim) {
  LawReport report;
  const Tick allowance = migration_overrun_allowance(sim);
  std::vector<std::vector<ExecSpan>> per(sim.vcpus().size());
  for (const auto& s : sim.execution()) per[static_cast<std::size_t>(s.vcpu.value)].push_back(s);
  for (const auto& vs : sim.vcpus()) {
    if (vs.v.kind != VcpuKind::Main) continue;
    const auto& spans = per[static_cast<std::size_t>(vs.v.id.value)];
    const Tick T = vs.v.T();
    const Tick limit = vs.v.C() + (vs.v.migration_thread ? allowance : 0);
    std::size_t j = 0;
    Tick full = 0;  // sum of spans [i, j) lying wholly inside the window
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const Tick start = spans[i].start;
      const Tick end = start + T;
      if (j < i) {
        j = i;
        full = 0;
      }
      while (j < spans.size() && spans[j].end <= end) {
        full += spans[j].end - spans[j].start;
        ++j;
      }
      Tick partial = (j < spans.size() && spans[j].start < end) ? end - spans[j].start : 0;
      Tick executed = full + partial;
      ++report.windows_checked;
      if (executed > limit) report.violations.push_back({vs.v.name, start, executed, limit});
      if (j > i) full -= spans[i].end - spans[i].start;
    }
  }
  return report;
}

struct ConservationReport {
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

// Every consumed tick is either replenished already, queued for
// replenishment, or part of the open chunk; and budget never exceeds C.
inline ConservationReport check_conservation(const Simulation& sim) {
  ConservationReport r;
  for (const auto& vs : sim.vcpus()) {
    const auto& s = vs.v.server;
    if (vs.consumed_total != vs.replenished_total + s.pending_total() + s.chunk_used()) {
      r.failures.push_back(vs.v.name + ": consumed " + std::to_string(vs.consumed_total) + " != replenished " +
                           std::to_string(vs.replenished_total) + " + pending " + std::to_string(s.pending_total()) +
                           " + open " + std::to_string(s.chunk_used()));
    }
    if (s.remaining() + s.pending_total() + s.chunk_used() != vs.v.C()) {
      r.failures.push_back(vs.v.name + ": budget accounting does not sum to C");
    }
  }
  return r;
}

// Values of one series for one entity, in sample order.
inline std::vector<double> series_values(const Simulation& sim, std::string_view series, std::string_view entity) {
  std::vector<double> out;
  for (const auto& m : sim.metrics()) {
    if (m.series == series && m.entity == entity) out.push_back(m.value);
  }
  return out;
}

}  // namespace mqsim
