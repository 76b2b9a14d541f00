#include <gtest/gtest.h>

#include <random>

#include "mqsim/admission.hpp"
#include "mqsim/metrics.hpp"
#include "mqsim/simulation.hpp"
#include "mqsim/vcpu.hpp"

using namespace mqsim;

namespace {

constexpr Tick ms = 1000;

std::vector<Replenishment> drain(SporadicServer& s) { return {s.queue().begin(), s.queue().end()}; }

}  // namespace

TEST(SporadicServer, FullChunkReplenishesOnePeriodLater) {
  SporadicServer s(10 * ms, 50 * ms);
  s.start_chunk(0);
  s.consume(10 * ms);
  auto r = s.end_chunk();
  ASSERT_TRUE(r.added);
  EXPECT_EQ(r.added->at_local, 50 * ms);
  EXPECT_EQ(r.added->amount, 10 * ms);
  EXPECT_EQ(s.remaining(), 0);
}

TEST(SporadicServer, SplitChunksReplenishSeparately) {
  SporadicServer s(10 * ms, 50 * ms);
  s.start_chunk(0);
  s.consume(4 * ms);
  s.end_chunk();
  s.start_chunk(20 * ms);
  s.consume(6 * ms);
  s.end_chunk();
  auto q = drain(s);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q[0].at_local, 50 * ms);
  EXPECT_EQ(q[0].amount, 4 * ms);
  EXPECT_EQ(q[1].at_local, 70 * ms);
  EXPECT_EQ(q[1].amount, 6 * ms);
}

TEST(SporadicServer, OverrunDefersReplenishment) {
  SporadicServer s(10 * ms, 50 * ms);
  s.start_chunk(0);
  s.consume(12 * ms, true);
  auto r = s.end_chunk();
  EXPECT_EQ(r.overrun, 2 * ms);
  EXPECT_EQ(r.added->at_local, 52 * ms);
  EXPECT_EQ(r.added->amount, 12 * ms);
  EXPECT_EQ(s.remaining(), -2 * ms);
  s.bind_event(7);
  EXPECT_EQ(s.replenish(7), 12 * ms);
  EXPECT_EQ(s.remaining(), 10 * ms);
}

TEST(SporadicServer, OverConsumeWithoutPermission) {
  SporadicServer s(10, 50);
  s.start_chunk(0);
  EXPECT_THROW(
      {
        try {
          s.consume(11);
        } catch (const SimError& e) {
          EXPECT_EQ(e.code(), ErrorCode::OverConsume);
          throw;
        }
      },
      SimError);
}

TEST(SporadicServer, QueueCapMergesOldest) {
  SporadicServer s(100, 1000);
  for (Tick i = 0; i < 9; ++i) {
    s.start_chunk(i * 10);
    s.consume(1);
    s.end_chunk();
    s.bind_event(static_cast<EventId>(i + 1));
  }
  auto q = drain(s);
  ASSERT_EQ(q.size(), SporadicServer::kMaxReplenishments);
  EXPECT_EQ(q.front().amount, 2);
  EXPECT_EQ(q.front().at_local, 1010);
  EXPECT_EQ(s.pending_total() + s.remaining(), 100);
}

TEST(SporadicServer, BudgetNeverExceedsCapacity) {
  SporadicServer s(10, 30);
  EventId next = 1;
  for (Tick t = 0; t < 5; ++t) {
    s.start_chunk(t * 3);
    s.consume(2);
    s.end_chunk();
    s.bind_event(next++);
    EXPECT_LE(s.remaining() + s.pending_total(), 10);
  }
}

TEST(Vcpu, MalformedParameters) {
  EXPECT_THROW(Vcpu(VcpuId{0}, "x", VcpuKind::Main, 30, 20, SandboxId{1}), SimError);
  EXPECT_THROW(Vcpu(VcpuId{0}, "x", VcpuKind::Main, 0, 20, SandboxId{1}), SimError);
  EXPECT_THROW(Vcpu(VcpuId{0}, "x", VcpuKind::Main, 1, 0, SandboxId{1}), SimError);
}

TEST(Vcpu, RateMonotonicOrder) {
  Vcpu a(VcpuId{0}, "a", VcpuKind::Main, 10, 50, SandboxId{1});
  Vcpu b(VcpuId{1}, "b", VcpuKind::Main, 20, 100, SandboxId{1});
  Vcpu c(VcpuId{2}, "c", VcpuKind::Main, 20, 100, SandboxId{1});
  EXPECT_LT(a.priority(), b.priority());
  EXPECT_LT(b.priority(), c.priority());
}

TEST(Vcpu, IoInheritsHighestOutstanding) {
  Vcpu io(VcpuId{0}, "io", VcpuKind::Io, 1, 10, SandboxId{1});
  Vcpu slow(VcpuId{1}, "slow", VcpuKind::Main, 20, 100, SandboxId{1});
  Vcpu fast(VcpuId{2}, "fast", VcpuKind::Main, 10, 50, SandboxId{1});
  EXPECT_EQ(io.priority(), PriorityKey::background(0));
  io.inherit_priority(slow);
  EXPECT_EQ(io.priority(), slow.priority());
  io.inherit_priority(fast);
  EXPECT_EQ(io.priority(), fast.priority());
  io.release_priority(fast);
  EXPECT_EQ(io.priority(), slow.priority());
  io.release_priority(slow);
  EXPECT_EQ(io.priority(), PriorityKey::background(0));
}

TEST(Vcpu, InheritOnMainRejected) {
  Vcpu a(VcpuId{0}, "a", VcpuKind::Main, 10, 50, SandboxId{1});
  Vcpu b(VcpuId{1}, "b", VcpuKind::Main, 10, 50, SandboxId{1});
  try {
    a.inherit_priority(b);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotIoVcpu);
  }
}

TEST(Admission, EmptySandboxAcceptsSingle) {
  auto v = admit({}, {20, 100, {100, 0}});
  EXPECT_TRUE(v.accepted);
  EXPECT_EQ(v.utilization_after, rat(1, 5));
  EXPECT_EQ(v.utilization_before, 0);
}

TEST(Admission, SecondSandboxPlusCanny) {
  std::vector<ServerParams> set{{20, 100, {100, 0}}, {10, 50, {-1, 1}}, {20, 100, {100, 2}}, {10, 100, {100, 3}}};
  ServerParams canny{20, 100, {100, 4}};
  auto ll = admit(set, canny, AdmissionPolicy::LiuLayland);
  EXPECT_EQ(ll.utilization_after, rat(9, 10));
  EXPECT_FALSE(ll.accepted);
  // 5(2^(1/5) - 1) = 0.7434...
  EXPECT_GT(ll.bound_used, rat(743, 1000));
  EXPECT_LT(ll.bound_used, rat(744, 1000));
  auto exact = admit(set, canny, AdmissionPolicy::Exact);
  EXPECT_TRUE(exact.accepted);
}

TEST(Admission, VerdictMatchesBound) {
  std::vector<ServerParams> set{{1, 4, {4, 0}}, {1, 5, {5, 1}}};
  auto v = admit(set, {1, 6, {6, 2}});
  EXPECT_EQ(v.accepted, v.utilization_after <= v.bound_used);
}

TEST(Admission, ExactRejectsOverload) {
  std::vector<ServerParams> set{{5, 10, {10, 0}}};
  EXPECT_FALSE(admit(set, {6, 10, {10, 1}}, AdmissionPolicy::Exact).accepted);
  // Harmonic set at U = 1 passes the exact test only.
  EXPECT_TRUE(admit(set, {10, 20, {20, 1}}, AdmissionPolicy::Exact).accepted);
  EXPECT_FALSE(admit(set, {10, 20, {20, 1}}, AdmissionPolicy::LiuLayland).accepted);
}

TEST(Admission, MalformedCandidate) {
  try {
    admit({}, {30, 20, {20, 0}});
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedVcpu);
  }
}

// --- scheduler behaviour through the simulator ------------------------------

namespace {

struct OneSandbox {
  Simulation sim;
  SandboxId sb{1};
  explicit OneSandbox(SimConfig cfg = {}) : sim(cfg) { sim.add_sandbox(sb, "s1"); }
};

Tick executed(const Simulation& sim, VcpuId v, Tick from, Tick to) {
  Tick sum = 0;
  for (const auto& s : sim.execution()) {
    if (s.vcpu != v) continue;
    sum += std::max<Tick>(0, std::min(s.end, to) - std::max(s.start, from));
  }
  return sum;
}

}  // namespace

TEST(Scheduler, ShorterPeriodRunsFirst) {
  OneSandbox f;
  auto a = f.sim.add_vcpu(f.sb, "A", VcpuKind::Main, 10, 50);
  auto b = f.sim.add_vcpu(f.sb, "B", VcpuKind::Main, 20, 100);
  f.sim.add_task("ta", a, compute_loop(1000));
  f.sim.add_task("tb", b, compute_loop(1000));
  f.sim.run_until(10);
  EXPECT_EQ(executed(f.sim, a, 0, 10), 10);
  EXPECT_EQ(executed(f.sim, b, 0, 10), 0);
  f.sim.run_until(30);
  EXPECT_EQ(executed(f.sim, b, 10, 30), 20);
}

TEST(Scheduler, IdleWhenDepletedThenResumesAtReplenishment) {
  OneSandbox f;
  auto a = f.sim.add_vcpu(f.sb, "A", VcpuKind::Main, 10, 50);
  f.sim.add_task("ta", a, compute_loop(1000));
  f.sim.run_until(49);
  EXPECT_EQ(executed(f.sim, a, 0, 49), 10);
  EXPECT_EQ(f.sim.vcpu(a).v.server.remaining(), 0);
  f.sim.run_until(55);
  EXPECT_EQ(executed(f.sim, a, 50, 55), 5);
}

TEST(Scheduler, SleepAndWake) {
  OneSandbox f;
  auto a = f.sim.add_vcpu(f.sb, "A", VcpuKind::Main, 50, 100);
  auto t = f.sim.add_task("ta", a, Program{{step::Compute{5}, step::Sleep{195}}, false});
  f.sim.run_until(100);
  EXPECT_EQ(f.sim.task(t).state, TaskState::Sleeping);
  EXPECT_EQ(f.sim.task(t).wake_local, 200);
  f.sim.run_until(200);
  EXPECT_EQ(f.sim.task(t).state, TaskState::Done);
}

TEST(Scheduler, IoRunsAtInheritedPriority) {
  OneSandbox f;
  auto hi = f.sim.add_vcpu(f.sb, "hi", VcpuKind::Main, 10, 50);
  auto lo = f.sim.add_vcpu(f.sb, "lo", VcpuKind::Main, 40, 60);
  auto io = f.sim.add_vcpu(f.sb, "io", VcpuKind::Io, 10, 40);
  auto t = f.sim.add_task("th", hi, Program{{step::Io{io, 5}, step::Compute{1}}, false});
  f.sim.add_task("tl", lo, compute_loop(1000));
  f.sim.run_until(5);
  EXPECT_EQ(executed(f.sim, io, 0, 5), 5);
  EXPECT_EQ(executed(f.sim, lo, 0, 5), 0);
  f.sim.run_until(6);
  EXPECT_EQ(f.sim.task(t).state, TaskState::Done);
  EXPECT_EQ(f.sim.vcpu(io).v.priority(), PriorityKey::background(io.value));
}

TEST(Scheduler, ScalingPreservesDecisions) {
  auto run = [](Tick k) {
    Simulation sim;
    SandboxId sb{1};
    sim.add_sandbox(sb, "s");
    auto a = sim.add_vcpu(sb, "A", VcpuKind::Main, 2 * k, 5 * k);
    auto b = sim.add_vcpu(sb, "B", VcpuKind::Main, 3 * k, 7 * k);
    sim.add_task("a", a, Program{{step::Compute{3 * k}, step::Sleep{4 * k}}});
    sim.add_task("b", b, Program{{step::Compute{5 * k}, step::Sleep{2 * k}}});
    sim.run_until(200 * k);
    std::vector<std::pair<std::int32_t, Tick>> out;
    for (const auto& s : sim.execution()) out.emplace_back(s.vcpu.value, s.start / k);
    return out;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Scheduler, ConservationAndSlidingWindow) {
  OneSandbox f;
  auto a = f.sim.add_vcpu(f.sb, "A", VcpuKind::Main, 3, 10);
  auto b = f.sim.add_vcpu(f.sb, "B", VcpuKind::Main, 4, 15);
  f.sim.add_task("a", a, Program{{step::ComputeRandom{1, 4}, step::SleepRandom{0, 6}}});
  f.sim.add_task("b", b, Program{{step::ComputeRandom{1, 9}, step::SleepRandom{0, 9}}});
  f.sim.run_until(5000);
  for (auto id : {a, b}) {
    const auto& vs = f.sim.vcpu(id);
    const auto& srv = vs.v.server;
    EXPECT_EQ(vs.consumed_total, vs.replenished_total + srv.pending_total() + srv.chunk_used());
    EXPECT_EQ(srv.remaining() + srv.pending_total() + srv.chunk_used(), vs.v.C());
    for (Tick w = 0; w + vs.v.T() <= 5000; ++w) {
      ASSERT_LE(executed(f.sim, id, w, w + vs.v.T()), vs.v.C()) << "window at " << w;
    }
  }
}

// Random ping-pong schedules with long sleeps fill the replenishment queue
// while chunks split on arrival; accounting must survive the folds.
TEST(Scheduler, RandomSchedulesKeepAccounting) {
  for (std::uint64_t seed = 1; seed <= 120; ++seed) {
    std::mt19937_64 g(seed);
    auto U = [&](Tick a, Tick b) { return std::uniform_int_distribution<Tick>(a, b)(g); };
    SimConfig cfg;
    cfg.seed = seed;
    cfg.sample_period = 10'000 * ms;
    Simulation sim(cfg);
    SandboxId s1{1}, s2{2};
    sim.add_sandbox(s1, "a");
    sim.add_sandbox(s2, "b");
    const Tick Ta = U(10, 200) * ms, Tb = U(10, 300) * ms;
    auto va = sim.add_vcpu(s1, "a", VcpuKind::Main, U(1, Ta / ms / 2) * ms, Ta);
    auto vb = sim.add_vcpu(s2, "b", VcpuKind::Main, U(1, Tb / ms / 2) * ms, Tb);
    const ChannelId ch{0};
    Program p, q;
    p.steps = {step::SleepRandom{0, U(0, 300 * ms)}, step::ComputeRandom{0, U(0, 50 * ms)}, step::Send{ch, true},
               step::Poll{ch, true}};
    q.steps = {step::Poll{ch, false}, step::Service{ch}, step::Send{ch, false}, step::SleepRandom{0, U(0, 300 * ms)},
               step::ComputeRandom{0, U(0, 50 * ms)}};
    auto ta = sim.add_task("a", va, p);
    auto tb = sim.add_task("b", vb, q);
    ExchangeProfile prof{U(1, 4000), U(1, 4000), Rational(U(1, 5)), Rational(U(1, 5)), U(0, 3 * ms)};
    sim.establish_channel("c", {s1, ta}, {s2, tb}, prof, 10);
    ASSERT_NO_THROW(sim.run_until(30'000 * ms)) << "seed " << seed;
    EXPECT_TRUE(check_conservation(sim).ok()) << "seed " << seed;
    EXPECT_TRUE(scan_sliding_window(sim).ok()) << "seed " << seed;
  }
}
