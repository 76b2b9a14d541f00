#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mqsim/address_space.hpp"
#include "mqsim/admission.hpp"
#include "mqsim/analytic_bounds.hpp"
#include "mqsim/channel.hpp"
#include "mqsim/clock.hpp"
#include "mqsim/cost_model.hpp"
#include "mqsim/event_queue.hpp"
#include "mqsim/migration.hpp"
#include "mqsim/trace.hpp"
#include "mqsim/vcpu.hpp"
#include "mqsim/workload.hpp"

namespace mqsim {

struct SimConfig {
  CostModel cost;
  AdmissionPolicy admission = AdmissionPolicy::LiuLayland;
  Tick sample_period = 1'000'000;
  std::int64_t tick_ns = 1000;
  std::uint64_t seed = 1;
  bool keep_trace_lines = true;
  bool record_execution = true;
  bool trace_copy_chunks = true;
};

enum class TaskState { Ready, Sleeping, BlockedIo, Done };
enum class TaskRole { Program, MigrationWorker, IoWorker };

struct RttSample {
  std::int64_t index = 0;
  Tick start_local = 0;
  Tick rtt = 0;
};

struct Task {
  TaskId id;
  std::string name;
  VcpuId vcpu;
  AddressSpaceId address_space;
  TaskRole role = TaskRole::Program;
  Program program;
  std::size_t pc = 0;
  TaskState state = TaskState::Ready;
  Tick step_left = 0;  // kNever while spinning on an empty mailbox
  bool detected = false;
  EventId wake_event = 0;
  Tick wake_local = 0;
  Tick exchange_start_local = -1;
  std::int64_t iterations = 0;
  std::int64_t exchanges = 0;
  std::string metric = "iterations";
  std::vector<RttSample> rtts;
  std::mt19937_64 rng;
};

struct ExecSpan {
  VcpuId vcpu;
  Tick start = 0;
  Tick end = 0;
};

// Budget handed out at `available_at` that should be used within one period.
struct BudgetLot {
  Tick available_at = 0;
  Tick amount = 0;
  bool missed = false;
};

struct IoRequest {
  TaskId task;
  VcpuId requester;
  Tick cost = 0;
};

struct VcpuState {
  Vcpu v;
  bool migrating = false;
  std::vector<TaskId> tasks;
  std::deque<TaskId> ready;  // FCFS among the VCPU's threads
  std::deque<IoRequest> io_queue;
  TaskId worker;
  std::deque<BudgetLot> lots;
  std::int64_t deadline_misses = 0;
  Tick consumed_total = 0;
  Tick replenished_total = 0;
  Tick max_overrun = 0;
  std::optional<std::size_t> pending_migration;
};

struct Sandbox {
  SandboxId id;
  std::string name;
  SandboxClock clock;
  std::vector<VcpuId> vcpus;
  VcpuId running;
  Tick last_sync = 0;
  EventId timer = 0;
  bool monitor = false;  // running worker is inside a non-preemptible copy atom
  Tick atom_overhead_left = 0;    // scheduling overhead at the head of the atom
  Tick atom_transition_left = 0;  // monitor exit/entry, part of the copy
  bool fresh_activation = false;
  bool frozen = false;  // CPU held by the migration IPI handler
  Tick frozen_left = 0;
  std::vector<SimEvent> deferred_ipis;
  VcpuId migration_vcpu;
  TaskId migration_task;
  JobId job;
  Tick sample_cycles = 0;
  Tick sample_useful = 0;
};

struct MigrationSpec {
  Tick at = 0;
  VcpuId vcpu;
  SandboxId to;
  MigrationMode mode = MigrationMode::Thread;
  Tick pde_extra_delay = 0;
};

struct MetricSample {
  Tick t = 0;
  std::string series;
  std::string entity;
  double value = 0;
};

// Replenishment and wakeup firings, kept for skew comparisons.
struct Firing {
  Tick t = 0;
  VcpuId vcpu;
  TaskId task;
  EventKind kind = EventKind::User;
};

class Simulation {
 public:
  explicit Simulation(SimConfig cfg = {}) : cfg_(std::move(cfg)), trace_(cfg_.keep_trace_lines, cfg_.tick_ns) {
    cfg_.cost.validate();
    if (cfg_.sample_period <= 0) throw SimError(ErrorCode::ValidationError, "sample period must be positive");
  }

  // --- construction -------------------------------------------------------

  SandboxId add_sandbox(SandboxId id, std::string name, SandboxClock clock = {}) {
    if (!id.valid() || sandboxes_.contains(id)) {
      throw SimError(ErrorCode::ValidationError, "duplicate or invalid sandbox id");
    }
    Sandbox sb;
    sb.id = id;
    sb.name = std::move(name);
    sb.clock = clock;
    sandboxes_.emplace(id, std::move(sb));
    return id;
  }

  VcpuId add_vcpu(SandboxId sandbox, std::string name, VcpuKind kind, Tick C, Tick T, bool migration_thread = false) {
    auto& sb = sandbox_ref(sandbox);
    VcpuId id{static_cast<std::int32_t>(vcpus_.size())};
    VcpuState vs;
    vs.v = Vcpu(id, std::move(name), kind, C, T, sandbox);
    vs.v.migration_thread = migration_thread;
    vs.lots.push_back({0, C, false});
    vcpus_.push_back(std::move(vs));
    sb.vcpus.push_back(id);
    if (migration_thread) {
      if (sb.migration_vcpu.valid()) throw SimError(ErrorCode::ValidationError, "one migration thread per sandbox");
      sb.migration_vcpu = id;
      sb.migration_task = add_worker(id, TaskRole::MigrationWorker, "migration:" + sb.name);
    } else if (kind == VcpuKind::Io) {
      add_worker(id, TaskRole::IoWorker, "io:" + vcpus_[static_cast<std::size_t>(id.value)].v.name);
    }
    return id;
  }

  AddressSpaceId add_address_space(std::int64_t pages, std::int64_t pdes, std::int64_t tss_limit = 8) {
    AddressSpace as;
    as.id = AddressSpaceId{static_cast<std::int32_t>(spaces_.size())};
    as.total_pages = pages;
    as.pde_count = pdes;
    as.tss_limit = tss_limit;
    as.validate();
    spaces_.push_back(as);
    return as.id;
  }

  TaskId add_task(std::string name, VcpuId vcpu, Program program, AddressSpaceId as = {}) {
    auto& vs = vcpu_ref(vcpu);
    if (vs.v.kind != VcpuKind::Main || vs.v.migration_thread) {
      throw SimError(ErrorCode::ValidationError, "tasks bind to ordinary Main VCPUs");
    }
    if (program.empty()) throw SimError(ErrorCode::ValidationError, "task " + name + " has an empty program");
    if (as.valid()) {
      auto& space = space_ref(as);
      for (TaskId other : vs.tasks) {
        auto o = tasks_[static_cast<std::size_t>(other.value)].address_space;
        if (o.valid() && o != as) throw SimError(ErrorCode::ValidationError, "one address space per VCPU");
      }
      space.location = vs.v.home;
    }
    TaskId id{static_cast<std::int32_t>(tasks_.size())};
    Task t;
    t.id = id;
    t.name = std::move(name);
    t.vcpu = vcpu;
    t.address_space = as;
    t.program = std::move(program);
    std::seed_seq seq{cfg_.seed, static_cast<std::uint64_t>(id.value) + 0x9e37u};
    t.rng.seed(seq);
    tasks_.push_back(std::move(t));
    vs.tasks.push_back(id);
    vs.ready.push_back(id);
    if (as.valid()) {
      auto& space = space_ref(as);
      space.task_controls.push_back(id);
      space.validate();
    }
    return id;
  }

  // Idempotent per sandbox pair; the requesting side pays one monitor round trip.
  ChannelId establish_channel(std::string name, Endpoint a, Endpoint b, ExchangeProfile profile,
                              std::optional<Tick> poll_cost = std::nullopt) {
    if (a.sandbox == b.sandbox) throw SimError(ErrorCode::SelfChannel, "channel endpoints must differ");
    sandbox_ref(a.sandbox);
    sandbox_ref(b.sandbox);
    for (auto& ch : channels_) {
      if ((ch.a.sandbox == a.sandbox && ch.b.sandbox == b.sandbox) ||
          (ch.a.sandbox == b.sandbox && ch.b.sandbox == a.sandbox)) {
        return ch.id;
      }
    }
    profile.validate();
    Channel ch;
    ch.id = ChannelId{static_cast<std::int32_t>(channels_.size())};
    ch.name = std::move(name);
    ch.a = a;
    ch.b = b;
    ch.profile = profile;
    ch.poll_cost = poll_cost.value_or(cfg_.cost.poll_cost);
    ch.established = true;
    establish_cost_ += cfg_.cost.vmexit_cost + cfg_.cost.vmentry_cost;
    channels_.push_back(std::move(ch));
    return channels_.back().id;
  }

  void set_task_metric(TaskId task, std::string metric) { task_ref(task).metric = std::move(metric); }

  std::size_t schedule_migration(MigrationSpec spec) {
    vcpu_ref(spec.vcpu);
    sandbox_ref(spec.to);
    migration_specs_.push_back(spec);
    return migration_specs_.size() - 1;
  }

  // Every sandbox's VCPU set must pass the configured admission test.
  void check_admission() const {
    for (const auto& [id, sb] : sandboxes_) {
      std::vector<ServerParams> set;
      for (VcpuId v : sb.vcpus) {
        const auto& vs = vcpus_[static_cast<std::size_t>(v.value)];
        if (vs.v.kind == VcpuKind::Main) set.push_back(params_of(vs.v));
      }
      if (set.empty()) continue;
      ServerParams last = set.back();
      set.pop_back();
      auto verdict = admit(set, last, cfg_.admission);
      if (!verdict.accepted) {
        throw SimError(ErrorCode::ValidationError,
                       "sandbox " + sb.name + " fails " + to_string(cfg_.admission) + " admission, U=" +
                           to_decimal(verdict.utilization_after, 4));
      }
    }
  }

  // --- running ------------------------------------------------------------

  void run_until(Tick until) {
    if (!started_) start();
    while (auto t = q_.next_time()) {
      if (*t > until) break;
      dispatch(q_.pop());
    }
    q_.advance_to(until);
    for (auto& [id, sb] : sandboxes_) sync(sb);
    for (auto& vs : vcpus_) check_pending_misses(vs);
  }

  // Issues a migration now. Throws NotEligible, BlockedOnIo or DestinationBusy.
  JobId request_migration(VcpuId vcpu, SandboxId to, MigrationMode mode, Tick pde_extra_delay = 0) {
    if (!started_) start();
    auto& vs = vcpu_ref(vcpu);
    auto& dst = sandbox_ref(to);
    if (vs.migrating) throw SimError(ErrorCode::NotEligible, vs.v.name + " is already migrating");
    if (vs.v.migration_thread || vs.v.kind != VcpuKind::Main) {
      throw SimError(ErrorCode::NotEligible, vs.v.name + " is not a migratable VCPU");
    }
    const SandboxId from = vs.v.home;
    if (from == to) throw SimError(ErrorCode::SelfIpi, "source and destination are the same sandbox");
    if (dst.job.valid()) throw SimError(ErrorCode::DestinationBusy, "sandbox " + dst.name + " has a job in flight");
    for (TaskId t : vs.tasks) {
      if (task_ref(t).state == TaskState::BlockedIo) {
        throw SimError(ErrorCode::BlockedOnIo, task_ref(t).name + " waits on I/O");
      }
    }
    auto& src = sandbox_ref(from);
    sync(src);
    const bool depleted = vs.v.server.remaining() <= 0;
    const bool sleeping = vs.ready.empty();
    if (src.running == vcpu || !(depleted || sleeping)) {
      throw SimError(ErrorCode::NotEligible, vs.v.name + " is runnable");
    }
    if (mode == MigrationMode::Thread && !dst.migration_vcpu.valid()) {
      throw SimError(ErrorCode::ValidationError, "destination has no migration thread");
    }
    AddressSpaceId asid;
    for (TaskId t : vs.tasks) {
      if (task_ref(t).address_space.valid()) asid = task_ref(t).address_space;
    }
    if (!asid.valid()) throw SimError(ErrorCode::ValidationError, vs.v.name + " has no address space");
    auto& space = space_ref(asid);

    MigrationJob job;
    job.id = JobId{static_cast<std::int32_t>(jobs_.size())};
    job.source = from;
    job.destination = to;
    job.address_space = asid;
    job.vcpu = vcpu;
    job.mode = mode;
    job.pde_extra_delay = pde_extra_delay;
    job.requested_at = now();
    job.tsc_s = src.clock.local_from_true(now());
    job.E_s = next_event_local(vs);
    if (job.E_s != kNever) job.E_s -= job.tsc_s;
    job.delta_s_worst = estimate_delta_s(space, cfg_.cost, pde_extra_delay);
    if (dst.migration_vcpu.valid()) {
      const auto& m = vcpu_ref(dst.migration_vcpu).v;
      job.C_m = m.C();
      job.T_m = m.T();
    } else {
      job.C_m = job.T_m = 1;
    }
    job.criterion_ok = job.E_s == kNever ||
                       bounds::check_migration_criterion({Rational(job.E_s), Rational(job.delta_s_worst),
                                                          Rational(job.C_m), Rational(job.T_m)});
    job.pages_at_request = space.total_pages;
    job.tss_at_request = space.tss_count();
    job.plan = plan_copy(space, cfg_.cost, pde_extra_delay);
    jobs_.push_back(std::move(job));
    auto& j = jobs_.back();

    detach(vs);
    vs.pending_migration.reset();
    dst.job = j.id;
    trace_.record(now(), from, "mig_request", job_entity(j),
                  "vcpu=" + vs.v.name + " to=" + std::to_string(to.value) + " mode=" + std::string(to_string(mode)) +
                      " E_s=" + (j.E_s == kNever ? std::string("none") : std::to_string(j.E_s)) +
                      " delta_worst=" + std::to_string(j.delta_s_worst) + " criterion=" + (j.criterion_ok ? "ok" : "violated"));
    // The source samples its TSC, spends rdtsc_cost, then raises the IPI.
    send_ipi(from, to, IpiType::MigrationRequest, j.id, cfg_.cost.rdtsc_cost);
    return j.id;
  }

  void send_ipi(SandboxId from, SandboxId to, IpiType type, JobId job = {}, Tick extra_delay = 0) {
    if (from == to) throw SimError(ErrorCode::SelfIpi, "IPI to self");
    sandbox_ref(to);
    EventPayload p;
    p.ipi = type;
    p.peer = from;
    p.job = job;
    post(now() + extra_delay + cfg_.cost.ipi_cost, to, EventKind::IpiDelivery, p);
  }

  // --- inspection ---------------------------------------------------------

  Tick now() const { return q_.now(); }
  const SimConfig& config() const { return cfg_; }
  const Trace& trace() const { return trace_; }
  const std::vector<MetricSample>& metrics() const { return metrics_; }
  const std::vector<ExecSpan>& execution() const { return spans_; }
  const std::vector<Firing>& firings() const { return firings_; }
  const std::vector<MigrationJob>& jobs() const { return jobs_; }
  const std::vector<VcpuState>& vcpus() const { return vcpus_; }
  const std::vector<Task>& tasks() const { return tasks_; }
  const std::vector<Channel>& channels() const { return channels_; }
  const std::vector<AddressSpace>& address_spaces() const { return spaces_; }
  const std::map<SandboxId, Sandbox>& sandboxes() const { return sandboxes_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  Tick establish_cost() const { return establish_cost_; }

  const VcpuState& vcpu(VcpuId id) const { return const_cast<Simulation*>(this)->vcpu_ref(id); }
  const Task& task(TaskId id) const { return const_cast<Simulation*>(this)->task_ref(id); }
  const Channel& channel(ChannelId id) const { return const_cast<Simulation*>(this)->channel_ref(id); }
  const Sandbox& sandbox(SandboxId id) const { return const_cast<Simulation*>(this)->sandbox_ref(id); }

  std::optional<TaskId> find_task(std::string_view name) const {
    for (const auto& t : tasks_) {
      if (t.name == name) return t.id;
    }
    return std::nullopt;
  }
  std::optional<VcpuId> find_vcpu(std::string_view name) const {
    for (const auto& v : vcpus_) {
      if (v.v.name == name) return v.v.id;
    }
    return std::nullopt;
  }

  // Externally driven mailbox operations for tests and tools.
  void mailbox_send_now(ChannelId ch, SandboxId from) { deliver(channel_ref(ch), from); }
  std::optional<std::int64_t> mailbox_poll_now(ChannelId id, SandboxId at) {
    auto& ch = channel_ref(id);
    auto got = ch.inbox(at).take();
    if (got) ++ch.received;
    return got;
  }

 private:
  // --- helpers ------------------------------------------------------------

  Sandbox& sandbox_ref(SandboxId id) {
    auto it = sandboxes_.find(id);
    if (it == sandboxes_.end()) throw SimError(ErrorCode::UnknownSandbox, "sandbox " + std::to_string(id.value));
    return it->second;
  }
  VcpuState& vcpu_ref(VcpuId id) {
    if (!id.valid() || static_cast<std::size_t>(id.value) >= vcpus_.size()) {
      throw SimError(ErrorCode::UnknownEntity, "vcpu " + std::to_string(id.value));
    }
    return vcpus_[static_cast<std::size_t>(id.value)];
  }
  Task& task_ref(TaskId id) {
    if (!id.valid() || static_cast<std::size_t>(id.value) >= tasks_.size()) {
      throw SimError(ErrorCode::UnknownEntity, "task " + std::to_string(id.value));
    }
    return tasks_[static_cast<std::size_t>(id.value)];
  }
  Channel& channel_ref(ChannelId id) {
    if (!id.valid() || static_cast<std::size_t>(id.value) >= channels_.size()) {
      throw SimError(ErrorCode::UnknownEntity, "channel " + std::to_string(id.value));
    }
    return channels_[static_cast<std::size_t>(id.value)];
  }
  AddressSpace& space_ref(AddressSpaceId id) {
    if (!id.valid() || static_cast<std::size_t>(id.value) >= spaces_.size()) {
      throw SimError(ErrorCode::UnknownEntity, "address space " + std::to_string(id.value));
    }
    return spaces_[static_cast<std::size_t>(id.value)];
  }
  MigrationJob& job_ref(JobId id) { return jobs_[static_cast<std::size_t>(id.value)]; }

  static std::string vcpu_entity(const VcpuState& vs) { return "vcpu:" + vs.v.name; }
  static std::string task_entity(const Task& t) { return "task:" + t.name; }
  static std::string job_entity(const MigrationJob& j) { return "job:" + std::to_string(j.id.value); }

  Tick local_now(const Sandbox& sb) const { return sb.clock.local_from_true(q_.now()); }
  Tick transition_cost() const { return cfg_.cost.vmexit_cost + cfg_.cost.vmentry_cost; }

  EventId post(Tick at, SandboxId sb, EventKind kind, EventPayload p = {}) {
    SimEvent ev;
    ev.fire_at = at;
    ev.sandbox = sb;
    ev.kind = kind;
    ev.payload = p;
    return q_.post(ev);
  }

  TaskId add_worker(VcpuId vcpu, TaskRole role, std::string name) {
    TaskId id{static_cast<std::int32_t>(tasks_.size())};
    Task t;
    t.id = id;
    t.name = std::move(name);
    t.vcpu = vcpu;
    t.role = role;
    t.state = TaskState::Sleeping;
    tasks_.push_back(std::move(t));
    auto& vs = vcpu_ref(vcpu);
    vs.tasks.push_back(id);
    vs.worker = id;
    return id;
  }

  void start() {
    started_ = true;
    for (auto& t : tasks_) {
      if (t.role == TaskRole::Program && t.state == TaskState::Ready) enter_step(t);
    }
    post(cfg_.sample_period, SandboxId{}, EventKind::SampleTick);
    for (std::size_t i = 0; i < migration_specs_.size(); ++i) {
      EventPayload p;
      p.amount = static_cast<Tick>(i);
      p.vcpu = migration_specs_[i].vcpu;
      post(std::max(migration_specs_[i].at, now()), SandboxId{}, EventKind::MigrationTrigger, p);
    }
    for (auto& [id, sb] : sandboxes_) reschedule(sb);
  }

  Tick next_event_local(const VcpuState& vs) const {
    Tick next = kNever;
    if (!vs.v.server.queue().empty()) next = vs.v.server.queue().front().at_local;
    for (TaskId t : vs.tasks) {
      const auto& task = tasks_[static_cast<std::size_t>(t.value)];
      if (task.state == TaskState::Sleeping && task.role == TaskRole::Program && task.wake_event != 0) {
        next = std::min(next, task.wake_local);
      }
    }
    return next;
  }

  // --- accounting ---------------------------------------------------------

  void sync(Sandbox& sb) {
    const Tick t = now();
    const Tick dt = t - sb.last_sync;
    if (dt > 0) {
      if (sb.frozen) {
        sb.frozen_left -= dt;
      } else if (sb.running.valid()) {
        charge(sb, vcpu_ref(sb.running), dt);
      }
    }
    sb.last_sync = t;
  }

  void charge(Sandbox& sb, VcpuState& vs, Tick dt) {
    Task& t = task_ref(vs.ready.front());
    const Tick start = sb.last_sync;
    vs.v.server.consume(dt, sb.monitor);
    vs.consumed_total += dt;
    Tick pos = start;
    Tick left = dt;
    while (left > 0 && !vs.lots.empty()) {
      auto& lot = vs.lots.front();
      Tick take = std::min(left, lot.amount);
      lot.amount -= take;
      left -= take;
      pos += take;
      if (lot.amount == 0) {
        if (!lot.missed && pos - lot.available_at > vs.v.T()) ++vs.deadline_misses;
        vs.lots.pop_front();
      }
    }
    if (cfg_.record_execution) {
      if (!spans_.empty() && spans_.back().vcpu == vs.v.id && spans_.back().end == start) {
        spans_.back().end = start + dt;
      } else {
        spans_.push_back({vs.v.id, start, start + dt});
      }
    }
    if (t.step_left != kNever) t.step_left -= dt;
    if (t.role == TaskRole::MigrationWorker) {
      Tick overhead = std::min(dt, sb.atom_overhead_left);
      sb.atom_overhead_left -= overhead;
      Tick transition = std::min(dt - overhead, sb.atom_transition_left);
      sb.atom_transition_left -= transition;
      sb.sample_cycles += dt;
      sb.sample_useful += dt - overhead - transition;
      if (sb.job.valid()) {
        auto& job = job_ref(sb.job);
        job.delta_s_actual += dt - overhead;
        job.overhead_total += overhead;
        job.budget_used_this_period += dt;
      }
    }
  }

  void close_chunk(VcpuState& vs) {
    auto& sb = sandbox_ref(vs.v.home);
    auto r = vs.v.server.end_chunk();
    if (r.merged_away) q_.cancel(*r.merged_away);
    if (r.overrun > 0) vs.max_overrun = std::max(vs.max_overrun, r.overrun);
    if (r.added) {
      Tick fire = std::max(now(), sb.clock.true_from_local(r.added->at_local));
      EventPayload p;
      p.vcpu = vs.v.id;
      p.local_time = r.added->at_local;
      vs.v.server.bind_event(post(fire, sb.id, EventKind::BudgetReplenishment, p));
    }
  }

  void check_pending_misses(VcpuState& vs) {
    const bool has_work = !vs.ready.empty() || vs.migrating;
    if (!has_work) return;
    for (auto& lot : vs.lots) {
      if (!lot.missed && now() - lot.available_at > vs.v.T()) {
        lot.missed = true;
        ++vs.deadline_misses;
      }
    }
  }

  void make_ready(VcpuState& vs, Task& t) {
    t.state = TaskState::Ready;
    if (vs.ready.empty()) {
      // Budget that sat idle while the VCPU had nothing to run is not late.
      for (auto& lot : vs.lots) lot.available_at = std::max(lot.available_at, now());
    }
    vs.ready.push_back(t.id);
  }

  void make_unready(VcpuState& vs, Task& t, TaskState state) {
    t.state = state;
    auto it = std::find(vs.ready.begin(), vs.ready.end(), t.id);
    if (it != vs.ready.end()) vs.ready.erase(it);
  }

  // --- scheduling ---------------------------------------------------------

  bool runnable(const VcpuState& vs) const {
    return !vs.migrating && !vs.ready.empty() && vs.v.server.remaining() > 0;
  }

  VcpuId pick_next(const Sandbox& sb) const {
    VcpuId best;
    PriorityKey best_key;
    for (VcpuId id : sb.vcpus) {
      const auto& vs = vcpus_[static_cast<std::size_t>(id.value)];
      if (!runnable(vs)) continue;
      PriorityKey k = vs.v.priority();
      if (!best.valid() || k < best_key) {
        best = id;
        best_key = k;
      }
    }
    return best;
  }

  void start_running(Sandbox& sb, VcpuId id) {
    auto& vs = vcpu_ref(id);
    sb.running = id;
    vs.v.server.start_chunk(local_now(sb));
    sb.fresh_activation = vs.v.migration_thread;
    trace_.record(now(), sb.id, "ctx_switch", vcpu_entity(vs), "budget=" + std::to_string(vs.v.server.remaining()));
  }

  void stop_running(Sandbox& sb) {
    auto& vs = vcpu_ref(sb.running);
    close_chunk(vs);
    sb.running = VcpuId{};
  }

  void reschedule(Sandbox& sb) {
    sync(sb);
    if (!sb.frozen && !sb.monitor) {
      for (int guard = 0;; ++guard) {
        if (guard > 64) throw SimError(ErrorCode::ValidationError, "scheduler failed to settle");
        VcpuId next = pick_next(sb);
        if (next != sb.running) {
          if (sb.running.valid()) stop_running(sb);
          if (next.valid()) {
            start_running(sb, next);
          } else {
            trace_.record(now(), sb.id, "ctx_switch", "idle", "");
          }
        }
        if (!sb.running.valid()) break;
        auto& vs = vcpu_ref(sb.running);
        Task& t = task_ref(vs.ready.front());
        if (t.role == TaskRole::MigrationWorker) {
          if (!begin_worker(sb, vs, t)) continue;
        } else if (t.role == TaskRole::Program && !t.detected && t.step_left == kNever) {
          try_detect(t);
        }
        break;
      }
    }
    arm_timer(sb);
    service_pending_migrations(sb);
  }

  void arm_timer(Sandbox& sb) {
    if (sb.timer != 0) q_.cancel(sb.timer);
    sb.timer = 0;
    if (sb.frozen) {
      sb.timer = post(now() + std::max<Tick>(sb.frozen_left, 0), sb.id, EventKind::StepComplete);
      return;
    }
    if (!sb.running.valid()) return;
    auto& vs = vcpu_ref(sb.running);
    const Task& t = task_ref(vs.ready.front());
    Tick dt;
    EventKind kind = EventKind::StepComplete;
    if (sb.monitor) {
      dt = std::max<Tick>(t.step_left, 0);
      kind = EventKind::PreemptionPoint;
    } else {
      const Tick budget = vs.v.server.remaining();
      dt = t.step_left == kNever ? budget : std::min(t.step_left, budget);
      if (t.step_left == kNever || budget < t.step_left) kind = EventKind::BudgetDepletion;
    }
    EventPayload p;
    p.vcpu = vs.v.id;
    sb.timer = post(now() + dt, sb.id, kind, p);
  }

  void on_timer(Sandbox& sb, const SimEvent& ev) {
    if (ev.seq != sb.timer) return;
    sb.timer = 0;
    sync(sb);
    if (sb.frozen) {
      if (sb.frozen_left <= 0) end_freeze(sb);
      reschedule(sb);
      return;
    }
    if (!sb.running.valid()) {
      reschedule(sb);
      return;
    }
    auto& vs = vcpu_ref(sb.running);
    Task& t = task_ref(vs.ready.front());
    if (sb.monitor) {
      if (t.step_left <= 0) preemption_point(sb, vs, t);
      reschedule(sb);
      return;
    }
    if (t.step_left == 0) complete_step(t);
    if (sb.running == vs.v.id && vs.v.server.remaining() <= 0) deplete(sb, vs);
    reschedule(sb);
  }

  void deplete(Sandbox& sb, VcpuState& vs) {
    trace_.record(now(), sb.id, "deplete", vcpu_entity(vs), "remaining=" + std::to_string(vs.v.server.remaining()));
    stop_running(sb);
  }

  void on_replenish(const SimEvent& ev) {
    auto& vs = vcpu_ref(ev.payload.vcpu);
    auto& sb = sandbox_ref(vs.v.home);
    sync(sb);
    // Taken out first: closing a chunk on a full queue may fold the oldest
    // entry, which can be this one.
    const Tick amount = vs.v.server.withdraw(ev.seq);
    // A chunk that absorbs a replenishment is split at that instant.
    if (sb.running == vs.v.id) {
      close_chunk(vs);
      vs.v.server.start_chunk(local_now(sb));
    }
    const Tick before = std::max<Tick>(vs.v.server.remaining(), 0);
    vs.v.server.credit(amount);
    const Tick after = std::max<Tick>(vs.v.server.remaining(), 0);
    vs.replenished_total += amount;
    if (after > before) vs.lots.push_back({now(), after - before, false});
    firings_.push_back({now(), vs.v.id, TaskId{}, EventKind::BudgetReplenishment});
    trace_.record(now(), sb.id, "replenish", vcpu_entity(vs), "amount=" + std::to_string(amount));
    reschedule(sb);
  }

  // --- task programs ------------------------------------------------------

  void enter_step(Task& t) {
    for (int guard = 0;; ++guard) {
      if (guard > 4096) throw SimError(ErrorCode::ValidationError, "program of " + t.name + " makes no progress");
      t.detected = false;
      bool blocking = false;
      std::visit(
          [&](auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, step::Compute>) {
              t.step_left = s.work;
            } else if constexpr (std::is_same_v<S, step::ComputeRandom>) {
              t.step_left = std::uniform_int_distribution<Tick>(s.lo, s.hi)(t.rng);
            } else if constexpr (std::is_same_v<S, step::Send>) {
              auto& ch = channel_ref(s.channel);
              auto& vs = vcpu_ref(t.vcpu);
              if (s.begins_exchange) t.exchange_start_local = local_now(sandbox_ref(vs.v.home));
              if (ch.outbox(vs.v.home).full) {
                throw SimError(ErrorCode::MailboxFull, t.name + " sends on " + ch.name + " with a full mailbox");
              }
              t.step_left = ch.send_cost(vs.v.home);
            } else if constexpr (std::is_same_v<S, step::Poll>) {
              channel_ref(s.channel).check_access(vcpu_ref(t.vcpu).v.home);
              t.step_left = kNever;
            } else if constexpr (std::is_same_v<S, step::Service>) {
              t.step_left = channel_ref(s.channel).profile.K;
            } else if constexpr (std::is_same_v<S, step::Sleep>) {
              go_sleep(t, s.duration);
              blocking = true;
            } else if constexpr (std::is_same_v<S, step::SleepRandom>) {
              go_sleep(t, std::uniform_int_distribution<Tick>(s.lo, s.hi)(t.rng));
              blocking = true;
            } else if constexpr (std::is_same_v<S, step::Release>) {
              if (s.period <= 0) throw SimError(ErrorCode::ValidationError, "release period must be positive");
              Tick local = local_now(sandbox_ref(vcpu_ref(t.vcpu).v.home));
              go_sleep(t, (local / s.period + 1) * s.period - local);
              blocking = true;
            } else if constexpr (std::is_same_v<S, step::ComputeSeq>) {
              if (s.values.empty()) throw SimError(ErrorCode::ValidationError, "empty compute sequence");
              t.step_left = s.values[s.next++ % s.values.size()];
            } else if constexpr (std::is_same_v<S, step::ReleaseSeq>) {
              if (s.period <= 0 || s.values.empty()) {
                throw SimError(ErrorCode::ValidationError, "release sequence needs a period and values");
              }
              const Tick off = s.values[s.next++ % s.values.size()];
              Tick local = local_now(sandbox_ref(vcpu_ref(t.vcpu).v.home));
              const Tick wait = (local + s.period - 1) / s.period * s.period + off - local;
              if (wait > 0) {
                go_sleep(t, wait);
                blocking = true;
              }
            } else if constexpr (std::is_same_v<S, step::Io>) {
              block_on_io(t, s.io_vcpu, s.cost);
              blocking = true;
            }
          },
          t.program.steps[t.pc]);
      if (blocking || t.step_left != 0) return;
      if (!finish_step(t)) return;
    }
  }

  // Applies the current step's completion effects and advances the program
  // counter. Returns false when the task has run off the end.
  bool finish_step(Task& t) {
    const Step& s = t.program.steps[t.pc];
    if (const auto* c = std::get_if<step::Compute>(&s); c && c->counts) ++t.iterations;
    if (const auto* send = std::get_if<step::Send>(&s)) deliver(channel_ref(send->channel), vcpu_ref(t.vcpu).v.home);
    ++t.pc;
    if (t.pc >= t.program.steps.size()) {
      if (!t.program.repeat) {
        make_unready(vcpu_ref(t.vcpu), t, TaskState::Done);
        return false;
      }
      t.pc = 0;
    }
    return true;
  }

  void complete_step(Task& t) {
    if (t.role == TaskRole::IoWorker) {
      finish_io(t);
      return;
    }
    if (finish_step(t)) enter_step(t);
  }

  void go_sleep(Task& t, Tick duration) {
    auto& vs = vcpu_ref(t.vcpu);
    auto& sb = sandbox_ref(vs.v.home);
    make_unready(vs, t, TaskState::Sleeping);
    t.wake_local = local_now(sb) + duration;
    t.wake_event = 0;
    if (!vs.migrating) post_wakeup(t, sb);
  }

  void post_wakeup(Task& t, Sandbox& sb) {
    EventPayload p;
    p.task = t.id;
    p.vcpu = t.vcpu;
    p.local_time = t.wake_local;
    t.wake_event = post(std::max(now(), sb.clock.true_from_local(t.wake_local)), sb.id, EventKind::TaskWakeup, p);
  }

  void on_wakeup(const SimEvent& ev) {
    Task& t = task_ref(ev.payload.task);
    if (t.wake_event != ev.seq) return;
    t.wake_event = 0;
    auto& vs = vcpu_ref(t.vcpu);
    auto& sb = sandbox_ref(vs.v.home);
    sync(sb);
    make_ready(vs, t);
    firings_.push_back({now(), vs.v.id, t.id, EventKind::TaskWakeup});
    trace_.record(now(), sb.id, "wakeup", task_entity(t), "local=" + std::to_string(t.wake_local));
    if (finish_step(t)) enter_step(t);
    reschedule(sb);
  }

  void block_on_io(Task& t, VcpuId io, Tick cost) {
    auto& vs = vcpu_ref(t.vcpu);
    auto& iovs = vcpu_ref(io);
    if (iovs.v.kind != VcpuKind::Io) throw SimError(ErrorCode::NotIoVcpu, iovs.v.name + " is not an I/O VCPU");
    if (iovs.v.home != vs.v.home) throw SimError(ErrorCode::ValidationError, "I/O VCPU must share the sandbox");
    make_unready(vs, t, TaskState::BlockedIo);
    iovs.v.inherit_priority(vs.v);
    iovs.io_queue.push_back({t.id, vs.v.id, cost});
    Task& w = task_ref(iovs.worker);
    if (w.state != TaskState::Ready) {
      w.step_left = cost;
      make_ready(iovs, w);
    }
  }

  void finish_io(Task& worker) {
    auto& iovs = vcpu_ref(worker.vcpu);
    IoRequest req = iovs.io_queue.front();
    iovs.io_queue.pop_front();
    iovs.v.release_priority(vcpu_ref(req.requester).v);
    Task& t = task_ref(req.task);
    auto& vs = vcpu_ref(t.vcpu);
    trace_.record(now(), iovs.v.home, "io_complete", task_entity(t), "cost=" + std::to_string(req.cost));
    make_ready(vs, t);
    if (finish_step(t)) enter_step(t);
    if (iovs.io_queue.empty()) {
      make_unready(iovs, worker, TaskState::Sleeping);
    } else {
      worker.step_left = iovs.io_queue.front().cost;
    }
  }

  // --- mailboxes ----------------------------------------------------------

  void deliver(Channel& ch, SandboxId from) {
    ch.outbox(from).put(ch.send_bytes(from), now());
    ++ch.sent;
    trace_.record(now(), from, "send", "chan:" + ch.name, "bytes=" + std::to_string(ch.send_bytes(from)));
    const SandboxId to = ch.peer(from);
    auto& peer = sandbox_ref(to);
    if (!peer.running.valid() || peer.monitor || peer.frozen) return;
    auto& vs = vcpu_ref(peer.running);
    Task& t = task_ref(vs.ready.front());
    if (t.role != TaskRole::Program || t.detected || t.step_left != kNever) return;
    const auto* poll = std::get_if<step::Poll>(&t.program.steps[t.pc]);
    if (!poll || poll->channel != ch.id) return;
    sync(peer);
    try_detect(t);
    arm_timer(peer);
  }

  void try_detect(Task& t) {
    const auto* poll = std::get_if<step::Poll>(&t.program.steps[t.pc]);
    if (!poll) return;
    auto& ch = channel_ref(poll->channel);
    auto& vs = vcpu_ref(t.vcpu);
    auto& sb = sandbox_ref(vs.v.home);
    auto got = ch.inbox(vs.v.home).take();
    if (!got) return;
    ++ch.received;
    t.detected = true;
    t.step_left = ch.poll_cost;
    trace_.record(now(), sb.id, "recv", "chan:" + ch.name, "bytes=" + std::to_string(*got));
    if (poll->ends_exchange && t.exchange_start_local >= 0) {
      Tick rtt = local_now(sb) - t.exchange_start_local;
      t.rtts.push_back({t.exchanges, t.exchange_start_local, rtt});
      ++t.exchanges;
      t.exchange_start_local = -1;
      trace_.record(now(), sb.id, "exchange", task_entity(t), "rtt=" + std::to_string(rtt));
    }
  }

  // --- IPIs ---------------------------------------------------------------

  void on_ipi(const SimEvent& ev) {
    auto& sb = sandbox_ref(ev.sandbox);
    if (sb.monitor || sb.frozen) {
      sb.deferred_ipis.push_back(ev);
      return;
    }
    handle_ipi(sb, ev);
  }

  void deliver_deferred_ipis(Sandbox& sb) {
    auto pending = std::move(sb.deferred_ipis);
    sb.deferred_ipis.clear();
    for (const auto& ev : pending) handle_ipi(sb, ev);
  }

  void handle_ipi(Sandbox& sb, const SimEvent& ev) {
    static constexpr const char* kNames[] = {"user", "mig_request", "mig_complete", "mig_reject"};
    trace_.record(now(), sb.id, "ipi", "from:" + std::to_string(ev.payload.peer.value),
                  kNames[static_cast<int>(ev.payload.ipi)]);
    switch (ev.payload.ipi) {
      case IpiType::User:
        break;
      case IpiType::MigrationRequest:
        on_migration_request(sb, job_ref(ev.payload.job));
        break;
      case IpiType::MigrationComplete: {
        auto& job = job_ref(ev.payload.job);
        trace_.record(now(), sb.id, "mig_reclaim", job_entity(job),
                      "pages=" + std::to_string(job.pages_at_request));
        source_released_.push_back(job.address_space);
        break;
      }
      case IpiType::MigrationReject:
        on_migration_reject(sb, job_ref(ev.payload.job));
        break;
    }
  }

  // --- migration ----------------------------------------------------------

  void detach(VcpuState& vs) {
    auto& sb = sandbox_ref(vs.v.home);
    vs.migrating = true;
    sb.vcpus.erase(std::remove(sb.vcpus.begin(), sb.vcpus.end(), vs.v.id), sb.vcpus.end());
    for (auto& r : vs.v.server.queue()) {
      if (r.event != 0) q_.cancel(r.event);
      r.event = 0;
    }
    for (TaskId id : vs.tasks) {
      Task& t = task_ref(id);
      if (t.wake_event != 0) {
        q_.cancel(t.wake_event);
        t.wake_event = 0;
      }
    }
  }

  // Re-posts held events shifted by `delta` local ticks, never earlier than now.
  void attach(VcpuState& vs, Sandbox& sb, Tick delta) {
    vs.v.home = sb.id;
    vs.migrating = false;
    sb.vcpus.push_back(vs.v.id);
    std::sort(sb.vcpus.begin(), sb.vcpus.end());
    for (auto& r : vs.v.server.queue()) {
      r.at_local += delta;
      Tick fire = std::max(now(), sb.clock.true_from_local(r.at_local));
      r.at_local = std::max(r.at_local, sb.clock.local_from_true(fire));
      EventPayload p;
      p.vcpu = vs.v.id;
      p.local_time = r.at_local;
      r.event = post(fire, sb.id, EventKind::BudgetReplenishment, p);
    }
    for (TaskId id : vs.tasks) {
      Task& t = task_ref(id);
      if (t.state == TaskState::Sleeping && t.role == TaskRole::Program) {
        t.wake_local += delta;
        post_wakeup(t, sb);
      }
    }
  }

  void on_migration_request(Sandbox& dst, MigrationJob& job) {
    sync(dst);
    // The handler reads its TSC at the end of its own rdtsc.
    job.tsc_d = dst.clock.local_from_true(now() + cfg_.cost.rdtsc_cost);
    job.delta_adj = bounds::clock_adjustment(job.tsc_d, job.tsc_s, cfg_.cost.rdtsc_cost, cfg_.cost.ipi_cost);
    if (job.mode == MigrationMode::Thread) {
      auto& mvs = vcpu_ref(dst.migration_vcpu);
      Task& w = task_ref(dst.migration_task);
      if (w.state != TaskState::Ready) make_ready(mvs, w);
      reschedule(dst);
      return;
    }
    if (!run_admission(dst, job)) return;
    if (dst.running.valid()) stop_running(dst);
    dst.frozen = true;
    Tick work = transition_cost();
    for (const auto& a : job.plan) work += a.cost;
    dst.frozen_left = work;
    job.activations = 1;
    job.delta_s_actual = work;
    trace_.record(now(), dst.id, "mig_chunk", job_entity(job), "handler work=" + std::to_string(work));
    reschedule(dst);
  }

  bool run_admission(Sandbox& dst, MigrationJob& job) {
    std::vector<ServerParams> set;
    for (VcpuId v : dst.vcpus) {
      const auto& vs = vcpu_ref(v);
      if (vs.v.kind == VcpuKind::Main) set.push_back(params_of(vs.v));
    }
    job.verdict = admit(set, params_of(vcpu_ref(job.vcpu).v), cfg_.admission);
    const std::string util = "U=" + to_decimal(job.verdict.utilization_after, 4) +
                             " bound=" + to_decimal(job.verdict.bound_used, 4);
    if (!job.verdict.accepted) {
      job.advance(JobState::Rejected);
      trace_.record(now(), dst.id, "mig_reject", job_entity(job), util);
      dst.job = JobId{};
      send_ipi(dst.id, job.source, IpiType::MigrationReject, job.id);
      return false;
    }
    job.advance(JobState::Admitted);
    job.admitted_at = now();
    trace_.record(now(), dst.id, "mig_admit", job_entity(job), util + " delta_adj=" + std::to_string(job.delta_adj));
    return true;
  }

  // Called with the worker selected to run and outside any atom.
  bool begin_worker(Sandbox& sb, VcpuState& vs, Task& w) {
    if (!sb.job.valid()) {
      make_unready(vs, w, TaskState::Sleeping);
      return false;
    }
    auto& job = job_ref(sb.job);
    if (job.state == JobState::Requested && !run_admission(sb, job)) {
      make_unready(vs, w, TaskState::Sleeping);
      return false;
    }
    Tick cost = job.plan[job.next_atom].cost;
    sb.atom_overhead_left = 0;
    sb.atom_transition_left = 0;
    if (sb.fresh_activation) {
      // One monitor exit/entry pair plus scheduling overhead per activation.
      sb.fresh_activation = false;
      sb.atom_overhead_left = cfg_.cost.migration_overhead;
      sb.atom_transition_left = transition_cost();
      cost += cfg_.cost.migration_overhead + transition_cost();
      ++job.activations;
      job.budget_used_this_period = 0;
    }
    sb.monitor = true;
    w.step_left = cost;
    return true;
  }

  void preemption_point(Sandbox& sb, VcpuState& vs, Task& w) {
    auto& job = job_ref(sb.job);
    const CopyAtom atom = job.plan[job.next_atom];
    sb.monitor = false;
    ++job.next_atom;
    switch (atom.kind) {
      case CopyAtom::Kind::Tss: job.advance(JobState::CopyingTss); break;
      case CopyAtom::Kind::Pde: job.advance(JobState::CopyingPde, atom.index); break;
      case CopyAtom::Kind::Bind: job.advance(JobState::Finalizing); break;
    }
    if (cfg_.trace_copy_chunks) {
      static constexpr const char* kKinds[] = {"tss", "pde", "bind"};
      trace_.record(now(), sb.id, "mig_chunk", job_entity(job),
                    std::string(kKinds[static_cast<int>(atom.kind)]) + "=" + std::to_string(atom.index) +
                        " budget=" + std::to_string(vs.v.server.remaining()));
    }
    if (vs.v.server.remaining() < 0) {
      job.max_overrun = std::max(job.max_overrun, -vs.v.server.remaining());
    }
    deliver_deferred_ipis(sb);
    if (atom.kind == CopyAtom::Kind::Bind) {
      make_unready(vs, w, TaskState::Sleeping);
      finalize(sb, job);
      return;
    }
    if (vs.v.server.remaining() <= 0) {
      deplete(sb, vs);
      return;
    }
    sb.monitor = true;
    w.step_left = job.plan[job.next_atom].cost;
  }

  void end_freeze(Sandbox& sb) {
    auto& job = job_ref(sb.job);
    sb.frozen = false;
    for (const auto& a : job.plan) {
      if (a.kind == CopyAtom::Kind::Tss) job.advance(JobState::CopyingTss);
      if (a.kind == CopyAtom::Kind::Pde) job.advance(JobState::CopyingPde, a.index);
    }
    job.next_atom = job.plan.size();
    job.advance(JobState::Finalizing);
    finalize(sb, job);
    deliver_deferred_ipis(sb);
  }

  void finalize(Sandbox& dst, MigrationJob& job) {
    auto& vs = vcpu_ref(job.vcpu);
    auto& space = space_ref(job.address_space);
    attach(vs, dst, job.delta_adj);
    space.location = dst.id;
    if (space.total_pages != job.pages_at_request || space.tss_count() != job.tss_at_request) {
      throw SimError(ErrorCode::ValidationError, "address space changed during migration");
    }
    job.advance(JobState::Completed);
    job.completed_at = now();
    dst.job = JobId{};
    trace_.record(now(), dst.id, "mig_finalize", job_entity(job),
                  "delta_adj=" + std::to_string(job.delta_adj) + " actual=" + std::to_string(job.delta_s_actual) +
                      " activations=" + std::to_string(job.activations));
    send_ipi(dst.id, job.source, IpiType::MigrationComplete, job.id);
  }

  void on_migration_reject(Sandbox& src, MigrationJob& job) {
    auto& vs = vcpu_ref(job.vcpu);
    sync(src);
    attach(vs, src, 0);
    // Same destination again after one period.
    for (std::size_t i = 0; i < migration_specs_.size(); ++i) {
      if (migration_specs_[i].vcpu == job.vcpu && migration_specs_[i].to == job.destination) {
        EventPayload p;
        p.amount = static_cast<Tick>(i);
        p.vcpu = job.vcpu;
        post(now() + vs.v.T(), SandboxId{}, EventKind::MigrationTrigger, p);
        break;
      }
    }
    reschedule(src);
  }

  void on_migration_trigger(const SimEvent& ev) {
    const auto idx = static_cast<std::size_t>(ev.payload.amount);
    const auto& spec = migration_specs_[idx];
    auto& vs = vcpu_ref(spec.vcpu);
    try {
      request_migration(spec.vcpu, spec.to, spec.mode, spec.pde_extra_delay);
    } catch (const SimError& e) {
      if (e.code() == ErrorCode::NotEligible || e.code() == ErrorCode::BlockedOnIo) {
        if (!vs.pending_migration) {
          trace_.record(now(), vs.v.home, "mig_defer", vcpu_entity(vs), std::string(to_string(e.code())));
        }
        vs.pending_migration = idx;
      } else if (e.code() == ErrorCode::DestinationBusy) {
        EventPayload p = ev.payload;
        post(now() + vs.v.T(), SandboxId{}, EventKind::MigrationTrigger, p);
      } else {
        throw;
      }
    }
  }

  void service_pending_migrations(Sandbox& sb) {
    if (in_service_) return;
    in_service_ = true;
    std::vector<VcpuId> ids = sb.vcpus;
    for (VcpuId id : ids) {
      auto& vs = vcpu_ref(id);
      if (!vs.pending_migration || sb.running == id) continue;
      if (vs.v.server.remaining() > 0 && !vs.ready.empty()) continue;
      const auto& spec = migration_specs_[*vs.pending_migration];
      try {
        request_migration(spec.vcpu, spec.to, spec.mode, spec.pde_extra_delay);
      } catch (const SimError& e) {
        if (e.code() != ErrorCode::NotEligible && e.code() != ErrorCode::BlockedOnIo &&
            e.code() != ErrorCode::DestinationBusy) {
          in_service_ = false;
          throw;
        }
      }
    }
    in_service_ = false;
  }

  // --- sampling -----------------------------------------------------------

  void on_sample() {
    for (auto& [id, sb] : sandboxes_) sync(sb);
    const Tick t = now();
    for (auto& vs : vcpus_) check_pending_misses(vs);
    last_iterations_.resize(tasks_.size(), 0);
    last_misses_.resize(vcpus_.size(), 0);
    last_exchanges_.resize(channels_.size(), 0);
    for (const auto& task : tasks_) {
      bool counts = false;
      for (const auto& s : task.program.steps) {
        if (const auto* c = std::get_if<step::Compute>(&s); c && c->counts) counts = true;
      }
      if (!counts) continue;
      auto& last = last_iterations_[static_cast<std::size_t>(task.id.value)];
      metrics_.push_back({t, task.metric, task.name, static_cast<double>(task.iterations - last)});
      last = task.iterations;
    }
    for (const auto& ch : channels_) {
      std::int64_t total = 0;
      for (const auto& task : tasks_) {
        if (task.id == ch.a.task) total = task.exchanges;
      }
      auto& last = last_exchanges_[static_cast<std::size_t>(ch.id.value)];
      metrics_.push_back({t, "comm_throughput", ch.name, static_cast<double>(total - last)});
      last = total;
    }
    for (auto& [id, sb] : sandboxes_) {
      if (!sb.migration_vcpu.valid()) continue;
      const auto& m = vcpu_ref(sb.migration_vcpu).v;
      const double capacity = static_cast<double>(m.C()) * static_cast<double>(cfg_.sample_period) /
                              static_cast<double>(m.T());
      metrics_.push_back({t, "mig_thread_cycles", sb.name, static_cast<double>(sb.sample_cycles)});
      metrics_.push_back({t, "mig_thread_util", sb.name, 100.0 * static_cast<double>(sb.sample_useful) / capacity});
      sb.sample_cycles = 0;
      sb.sample_useful = 0;
    }
    for (const auto& vs : vcpus_) {
      auto& last = last_misses_[static_cast<std::size_t>(vs.v.id.value)];
      metrics_.push_back({t, "deadline_misses", vs.v.name, static_cast<double>(vs.deadline_misses - last)});
      last = vs.deadline_misses;
    }
    trace_.record(t, SandboxId{}, "sample", "-", "n=" + std::to_string(t / cfg_.sample_period));
    post(t + cfg_.sample_period, SandboxId{}, EventKind::SampleTick);
  }

  void dispatch(const SimEvent& ev) {
    switch (ev.kind) {
      case EventKind::BudgetReplenishment: on_replenish(ev); break;
      case EventKind::TaskWakeup: on_wakeup(ev); break;
      case EventKind::IpiDelivery: on_ipi(ev); break;
      case EventKind::BudgetDepletion:
      case EventKind::StepComplete:
      case EventKind::PreemptionPoint: on_timer(sandbox_ref(ev.sandbox), ev); break;
      case EventKind::SampleTick: on_sample(); break;
      case EventKind::MigrationTrigger: on_migration_trigger(ev); break;
      case EventKind::IoCompletion:
      case EventKind::User: break;
    }
  }

  SimConfig cfg_;
  EventQueue q_;
  Trace trace_;
  bool started_ = false;
  bool in_service_ = false;
  std::map<SandboxId, Sandbox> sandboxes_;
  std::vector<VcpuState> vcpus_;
  std::vector<Task> tasks_;
  std::vector<Channel> channels_;
  std::vector<AddressSpace> spaces_;
  std::vector<MigrationJob> jobs_;
  std::vector<MigrationSpec> migration_specs_;
  std::vector<AddressSpaceId> source_released_;
  std::vector<MetricSample> metrics_;
  std::vector<ExecSpan> spans_;
  std::vector<Firing> firings_;
  std::vector<std::string> warnings_;
  std::vector<std::int64_t> last_iterations_, last_misses_, last_exchanges_;
  Tick establish_cost_ = 0;
};

}  // namespace mqsim
