#include <gtest/gtest.h>

#include <random>

#include "mqsim/analytic_bounds.hpp"

namespace {

using mqsim::Rational;
using mqsim::rat;
using namespace mqsim::bounds;

CommBoundInput demands(mqsim::Tick cs, mqsim::Tick ts, mqsim::Tick cd, mqsim::Tick td, Rational req,
                       Rational resp) {
  return CommBoundInput::from_demands(cs, ts, cd, td, req, resp);
}

TEST(StepF, Boundaries) {
  EXPECT_EQ(step_f(rat(1)), 1);
  EXPECT_EQ(step_f(rat(1, 2)), 0);
  EXPECT_EQ(step_f(rat(28)), 1);
  EXPECT_EQ(step_f(rat(999, 1000)), 0);
  EXPECT_EQ(step_f(rat(-3)), 0);
}

// Hand evaluation of the symbol chain for (2/10, 3/15, request 5, response 4):
//   L_s = 2 - 5 mod 2 = 1            L_d = 3 - 4 mod 3 = 2
//   S = ceil(5/2)*10 - 1 = 29        D = ceil(4/3)*15 - 2 = 28
//   R = 27/10, floor 2               Q = 28 - 1 - 20 = 7
//   P = 7 - 8 = -1                   f(7/8) = 0 so B = 2
//   W  = 57 + f(28/1)*(1 + 20 - 2 - 28) = 48
//   N1 = min(7, 1) = 1, N2 = 0       W' = 49
TEST(CommBreakdown, WorkedExamplePublishedChain) {
  auto b = comm_breakdown(demands(2, 10, 3, 15, 5, 4));
  EXPECT_EQ(b.L_s, 1);
  EXPECT_EQ(b.L_d, 2);
  EXPECT_EQ(b.S, 29);
  EXPECT_EQ(b.D, 28);
  EXPECT_EQ(b.R, rat(27, 10));
  EXPECT_EQ(b.R_floor, 2);
  EXPECT_EQ(b.Q, 7);
  EXPECT_EQ(b.P, -1);
  EXPECT_EQ(b.B, 2);
  EXPECT_EQ(b.N_1, 1);
  EXPECT_EQ(b.N_2, 0);
  EXPECT_EQ(b.E, 1);
  EXPECT_EQ(b.W, 48);
  EXPECT_EQ(b.W_shifted, 49);
  EXPECT_EQ(mqsim::to_decimal(b.W), "48");
  EXPECT_EQ(mqsim::to_decimal(b.W_shifted), "49");
}

// Sound form charges window floor(R)+1 = 3: 29 + 1 + 30 - 2 = 58, W' = 59.
// The exhaustive search reaches 58 for these inputs.
TEST(CommBreakdown, WorkedExampleSoundForm) {
  auto b = comm_breakdown(demands(2, 10, 3, 15, 5, 4));
  EXPECT_EQ(b.W_sound, 58);
  EXPECT_EQ(b.W_shifted_sound, 59);
  EXPECT_EQ(b.case_id, 4);
}

// Reply lands inside the sender's remaining budget: W = S + D.
TEST(CommBreakdown, ReplyWithinRemainingBudget) {
  auto b = comm_breakdown(demands(20, 100, 2, 10, 1, 1));
  EXPECT_EQ(b.L_s, 19);
  EXPECT_EQ(b.D, 9);
  EXPECT_EQ(step_f(b.D / b.L_s), 0);
  EXPECT_EQ(b.S, 81);
  EXPECT_EQ(b.W, 90);
  EXPECT_EQ(b.E, 0);
  EXPECT_EQ(b.W_shifted, 90);
  EXPECT_EQ(b.W_sound, 90);
  EXPECT_EQ(b.case_id, 1);
}

TEST(CommBreakdown, ExactMultipleConvention) {
  auto b = comm_breakdown(demands(5, 20, 3, 15, 5, 1));
  EXPECT_EQ(b.L_s, 5);
  EXPECT_EQ(b.S, 15);
}

TEST(CommBreakdown, QStaysInRangeWhenDBelowLs) {
  auto b = comm_breakdown(demands(20, 100, 2, 10, 1, 1));
  EXPECT_GE(b.Q, 0);
  EXPECT_LT(b.Q, 100);
  EXPECT_EQ(b.R_floor, -1);
  EXPECT_EQ(b.Q, 90);
}

TEST(CommBreakdown, DivisionGuards) {
  // T_s == C_s: f(Q / 0) is 1 iff Q > 0. L_s = 6, D = 14, Q = 8, P = 8, B = 2.
  auto full = comm_breakdown(demands(10, 10, 3, 15, 4, 2));
  EXPECT_EQ(full.Q, 8);
  EXPECT_EQ(full.P, 8);
  EXPECT_EQ(full.B, 2);

  // P == 0: L_s = 3, D = 9, Q = 6 = T_s - C_s. f((C_s - L_s) / 0) = 1 since
  // C_s > L_s, so N_2 = min(6, 4 - 3 - 0) = 1.
  auto guard = comm_breakdown(demands(4, 10, 1, 10, 1, 1));
  EXPECT_EQ(guard.L_s, 3);
  EXPECT_EQ(guard.D, 9);
  EXPECT_EQ(guard.Q, 6);
  EXPECT_EQ(guard.P, 0);
  EXPECT_EQ(guard.B, 4);
  EXPECT_EQ(guard.N_1, 0);
  EXPECT_EQ(guard.N_2, 1);
  EXPECT_EQ(guard.E, 1);
}

TEST(CommBreakdown, BytesAndRationalDelta) {
  // 2 KB at 625/256 ticks per byte is exactly 5000 ticks.
  CommBoundInput in;
  in.C_s = 20000;
  in.T_s = 100000;
  in.C_d = 20000;
  in.T_d = 100000;
  in.N = 2048;
  in.M = 2048;
  in.delta_s = rat(625, 256);
  in.delta_d = rat(625, 256);
  EXPECT_EQ(in.request_demand(), 5000);
  auto b = comm_breakdown(in);
  EXPECT_EQ(b.W_shifted, 85000);
  EXPECT_EQ(b.W_shifted_sound, 185000);
}

TEST(CommBreakdown, DegenerateRequestRejectedUnlessOptedIn) {
  auto in = demands(2, 10, 3, 15, 0, 4);
  try {
    comm_breakdown(in);
    FAIL();
  } catch (const mqsim::SimError& e) {
    EXPECT_EQ(e.code(), mqsim::ErrorCode::DegenerateInput);
  }
  in.allow_zero_request = true;
  EXPECT_NO_THROW(comm_breakdown(in));
}

TEST(CommBreakdown, MalformedBudgetsRejected) {
  EXPECT_THROW(comm_breakdown(demands(11, 10, 3, 15, 1, 1)), mqsim::SimError);
  EXPECT_THROW(comm_breakdown(demands(2, 10, 0, 15, 1, 1)), mqsim::SimError);
}

// The five sender/receiver configurations with N*delta = M*delta = 5 ms, K = 0 (values in ms).
// Frozen from an independent fraction-arithmetic evaluation.
struct RoundTripCase {
  mqsim::Tick C_d, T_d;
  int W, W_shifted, W_sound, W_shifted_sound;
};

TEST(CommBreakdown, PingpongRegimes) {
  const RoundTripCase cases[] = {
      {2, 10, 80, 85, 180, 185},     {20, 100, 80, 85, 180, 185},  {20, 130, 180, 180, 280, 280},
      {20, 200, 180, 185, 280, 285}, {20, 230, 280, 280, 380, 380},
  };
  for (const auto& c : cases) {
    auto b = comm_breakdown(demands(20, 100, c.C_d, c.T_d, 5, 5));
    EXPECT_EQ(b.W, c.W) << c.C_d << "/" << c.T_d;
    EXPECT_EQ(b.W_shifted, c.W_shifted) << c.C_d << "/" << c.T_d;
    EXPECT_EQ(b.W_sound, c.W_sound) << c.C_d << "/" << c.T_d;
    EXPECT_EQ(b.W_shifted_sound, c.W_shifted_sound) << c.C_d << "/" << c.T_d;
  }
}

TEST(CommBreakdown, ShiftedNeverBelowUnshifted) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    mqsim::Tick ts = 1 + static_cast<mqsim::Tick>(rng() % 200);
    mqsim::Tick cs = 1 + static_cast<mqsim::Tick>(rng() % static_cast<std::uint64_t>(ts));
    mqsim::Tick td = 1 + static_cast<mqsim::Tick>(rng() % 200);
    mqsim::Tick cd = 1 + static_cast<mqsim::Tick>(rng() % static_cast<std::uint64_t>(td));
    auto b = comm_breakdown(demands(cs, ts, cd, td, 1 + static_cast<std::int64_t>(rng() % 400),
                                    static_cast<std::int64_t>(rng() % 400)));
    EXPECT_GE(b.E, 0);
    EXPECT_GE(b.W_shifted, b.W);
    EXPECT_GE(b.W_shifted_sound, b.W_sound);
    EXPECT_GT(b.L_s, 0);
    EXPECT_LE(b.L_s, cs);
    EXPECT_GT(b.L_d, 0);
    EXPECT_LE(b.L_d, cd);
  }
}

TEST(CommBreakdown, SoundFormMonotoneInDemandsWithinRegime) {
  std::mt19937_64 rng(9);
  int probes = 0;
  while (probes < 3000) {
    mqsim::Tick ts = 2 + static_cast<mqsim::Tick>(rng() % 300);
    mqsim::Tick cs = 2 + static_cast<mqsim::Tick>(rng() % static_cast<std::uint64_t>(ts - 1));
    mqsim::Tick td = 2 + static_cast<mqsim::Tick>(rng() % 300);
    mqsim::Tick cd = 2 + static_cast<mqsim::Tick>(rng() % static_cast<std::uint64_t>(td - 1));
    std::int64_t req = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(cs - 1));
    std::int64_t resp = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(cd - 1));
    bool bump_request = rng() % 2 == 0;
    std::int64_t req2 = req + (bump_request ? 1 : 0);
    std::int64_t resp2 = resp + (bump_request ? 0 : 1);
    if (req2 >= cs || resp2 >= cd) continue;
    ++probes;
    auto lo = comm_breakdown(demands(cs, ts, cd, td, req, resp));
    auto hi = comm_breakdown(demands(cs, ts, cd, td, req2, resp2));
    EXPECT_LE(lo.W_sound, hi.W_sound) << cs << "/" << ts << " " << cd << "/" << td << " " << req
                                      << "," << resp;
  }
}

TEST(MigrationBound, TableValues) {
  const Rational cm(10), tm(50), es = rat(798, 10);
  EXPECT_EQ(migration_bound(rat(54, 10), cm, tm), rat(54, 10));
  EXPECT_TRUE(check_migration_criterion({es, rat(54, 10), cm, tm}));
  EXPECT_EQ(migration_bound(rat(20), cm, tm), 100);
  EXPECT_FALSE(check_migration_criterion({es, rat(20), cm, tm}));
  EXPECT_EQ(migration_bound(rat(264, 10), cm, tm), rat(1064, 10));
  EXPECT_FALSE(check_migration_criterion({es, rat(264, 10), cm, tm}));
  EXPECT_EQ(migration_bound(rat(8914, 10), cm, tm), rat(44514, 10));
}

TEST(MigrationBound, TwentyIsFirstViolation) {
  const Rational cm(10), tm(50), es = rat(798, 10);
  // Every Delta_s in [0, 20) at 0.1 ms steps passes; 20 fails.
  for (int tenths = 0; tenths < 200; ++tenths) {
    EXPECT_TRUE(check_migration_criterion({es, rat(tenths, 10), cm, tm})) << tenths;
  }
  EXPECT_FALSE(check_migration_criterion({es, rat(20), cm, tm}));
}

TEST(MigrationBound, RightDiscontinuousAtBudgetMultiples) {
  const Rational cm(10), tm(50);
  for (int k = 0; k <= 10; ++k) {
    EXPECT_EQ(migration_bound(Rational(10 * k), cm, tm), Rational(50 * k));
    if (k > 0) {
      Rational below = Rational(10 * k) - rat(1, 1000);
      EXPECT_EQ(migration_bound(below, cm, tm), Rational(50 * (k - 1)) + Rational(10) - rat(1, 1000));
    }
  }
}

TEST(MigrationBound, RejectsBadThreadBudget) {
  EXPECT_THROW(migration_bound(rat(1), rat(0), rat(50)), mqsim::SimError);
  EXPECT_THROW(migration_bound(rat(1), rat(60), rat(50)), mqsim::SimError);
}

TEST(ClockAdjustment, DirectSubstitution) {
  EXPECT_EQ(clock_adjustment(1000, 400, 10, 100), 480);
  EXPECT_EQ(clock_adjustment(777, 777, 0, 0), 0);
  EXPECT_EQ(clock_adjustment(400, 1000, 1, 100), -702);
}

}  // namespace
