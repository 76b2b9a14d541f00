#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mqsim/clock.hpp"
#include "mqsim/event_queue.hpp"
#include "mqsim/trace.hpp"

namespace {

using mqsim::EventKind;
using mqsim::EventQueue;
using mqsim::SandboxClock;
using mqsim::SandboxId;
using mqsim::SimEvent;
using mqsim::Tick;

SimEvent at(Tick t, EventKind kind = EventKind::User) {
  SimEvent ev;
  ev.fire_at = t;
  ev.sandbox = SandboxId{1};
  ev.kind = kind;
  return ev;
}

TEST(SandboxClock, IdentityClock) {
  SandboxClock clock;
  EXPECT_EQ(clock.local_from_true(1000), 1000);
}

TEST(SandboxClock, OffsetIsAdded) {
  SandboxClock clock(480, 0);
  EXPECT_EQ(clock.local_from_true(1000), 1480);
}

TEST(SandboxClock, DriftFormula) {
  SandboxClock clock(0, 1000);
  // 10^6 + floor(10^6 * 1000 / 10^6)
  EXPECT_EQ(clock.local_from_true(1'000'000), 1'001'000);
}

TEST(SandboxClock, RejectsNegativeDrift) {
  EXPECT_THROW(SandboxClock(0, -5), mqsim::SimError);
}

TEST(SandboxClock, RoundTripWithoutDrift) {
  SandboxClock clock(-12345, 0);
  for (Tick x : {Tick{-5}, Tick{0}, Tick{7}, Tick{1'000'000}}) {
    EXPECT_EQ(clock.local_from_true(clock.true_from_local(x)), x);
  }
}

TEST(SandboxClock, StrictlyMonotoneAndInverseIsEarliest) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tick offset = static_cast<Tick>(rng() % 20001) - 10000;
    std::int64_t ppm = static_cast<std::int64_t>(rng() % 200000);
    SandboxClock clock(offset, ppm);
    Tick prev = clock.local_from_true(-1);
    for (Tick t = 0; t < 3000; t += 1 + static_cast<Tick>(rng() % 97)) {
      Tick now = clock.local_from_true(t);
      EXPECT_GT(now, prev);
      prev = now;
      Tick back = clock.true_from_local(now);
      EXPECT_LE(back, t);
      EXPECT_EQ(clock.local_from_true(back), now);
      EXPECT_LT(clock.local_from_true(back - 1), now);
    }
  }
}

TEST(EventQueue, PostIssuesIdAndFiresAtTimestamp) {
  EventQueue q;
  q.advance_to(50);
  auto id = q.post(at(100));
  EXPECT_TRUE(q.pending(id));
  auto ev = q.pop();
  EXPECT_EQ(ev.fire_at, 100);
  EXPECT_EQ(q.now(), 100);
}

TEST(EventQueue, EqualTimestampsAreFifo) {
  EventQueue q;
  SimEvent a = at(100);
  a.payload.amount = 1;
  SimEvent b = at(100);
  b.payload.amount = 2;
  q.post(a);
  q.post(b);
  EXPECT_EQ(q.pop().payload.amount, 1);
  EXPECT_EQ(q.pop().payload.amount, 2);
}

TEST(EventQueue, PastTimestampRejected) {
  EventQueue q;
  q.advance_to(50);
  try {
    q.post(at(40));
    FAIL() << "expected PastTimestamp";
  } catch (const mqsim::SimError& e) {
    EXPECT_EQ(e.code(), mqsim::ErrorCode::PastTimestamp);
  }
}

TEST(EventQueue, CancelRemovesOnlyThatEvent) {
  EventQueue q;
  auto a = q.post(at(10));
  auto b = q.post(at(10));
  EXPECT_TRUE(q.cancel(a));
  EXPECT_FALSE(q.cancel(a));
  EXPECT_EQ(q.size(), 1u);
  EXPECT_EQ(q.pop().seq, b);
  EXPECT_TRUE(q.empty());
}

// Event conservation and ordering over a random workload: every non-cancelled
// event pops exactly once, in (time, seq) order, never before its post time.
TEST(EventQueue, RandomizedConservationAndOrder) {
  std::mt19937_64 rng(11);
  EventQueue q;
  std::map<std::uint64_t, Tick> live;
  Tick last_time = 0;
  std::uint64_t last_seq = 0;
  bool first = true;
  std::size_t popped = 0;
  for (int step = 0; step < 5000; ++step) {
    int op = static_cast<int>(rng() % 4);
    if (op < 2) {
      Tick t = q.now() + static_cast<Tick>(rng() % 50);
      auto id = q.post(at(t));
      live[id] = t;
    } else if (op == 2 && !live.empty()) {
      auto it = live.begin();
      std::advance(it, static_cast<long>(rng() % live.size()));
      EXPECT_TRUE(q.cancel(it->first));
      live.erase(it);
    } else if (!q.empty()) {
      auto ev = q.pop();
      ASSERT_TRUE(live.contains(ev.seq));
      EXPECT_EQ(live[ev.seq], ev.fire_at);
      live.erase(ev.seq);
      if (!first) {
        EXPECT_TRUE(ev.fire_at > last_time || (ev.fire_at == last_time && ev.seq > last_seq));
      }
      first = false;
      last_time = ev.fire_at;
      last_seq = ev.seq;
      ++popped;
    }
  }
  while (!q.empty()) {
    auto ev = q.pop();
    EXPECT_EQ(live.erase(ev.seq), 1u);
  }
  EXPECT_TRUE(live.empty());
  EXPECT_GT(popped, 0u);
}

TEST(Trace, HashCoversCanonicalCsvBytes) {
  mqsim::Trace trace;
  trace.record(100, SandboxId{1}, "replenish", "vcpu:3", "amount=20000");
  trace.record(150, SandboxId{}, "sample", "-", "t=1");
  std::ostringstream csv;
  trace.write_csv(csv);
  EXPECT_EQ(csv.str(),
            "t_true_us,sandbox,event_kind,entity,detail\n"
            "100,1,replenish,vcpu:3,amount=20000\n"
            "150,-,sample,-,t=1\n");
  EXPECT_EQ(trace.hash(), mqsim::Fnv1a::of(csv.str()));
}

TEST(Trace, HashIndependentOfLineRetention) {
  mqsim::Trace kept(true), dropped(false);
  for (auto* t : {&kept, &dropped}) {
    t->record(1, SandboxId{0}, "a", "b", "c,d");
  }
  EXPECT_EQ(kept.hash(), dropped.hash());
  EXPECT_TRUE(dropped.lines().empty());
  EXPECT_EQ(kept.lines().front(), "1,0,a,b,c;d");
}

TEST(Trace, Fnv1aKnownVectors) {
  EXPECT_EQ(mqsim::Fnv1a::of(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(mqsim::Fnv1a::of("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Trace, MicrosecondFormatting) {
  EXPECT_EQ(mqsim::format_us(1234, 1000), "1234");
  EXPECT_EQ(mqsim::format_us(1234, 100), "123.4");
  EXPECT_EQ(mqsim::format_us(5, 10), "0.05");
}

}  // namespace
