#pragma once

#include <cstdint>

#include "mqsim/rational.hpp"
#include "mqsim/types.hpp"

namespace mqsim::bounds {

// Which receive-window index the round-trip bound charges.
//
// Published evaluates the symbol chain exactly as printed, charging
// floor(R) sender periods. Sound charges floor(R) + 1: Q is measured from the
// end of sender window floor(R), so the sender cannot see the reply before
// window floor(R) + 1 opens. Published under-estimates by one sender period
// whenever the reply misses the sender's remaining budget.
enum class BoundForm { Published, Sound };

struct CommBoundInput {
  Tick C_s = 0;
  Tick T_s = 0;
  Tick C_d = 0;
  Tick T_d = 0;
  std::int64_t N = 0;  // request bytes
  std::int64_t M = 0;  // response bytes
  Rational delta_s = 0;  // ticks per request byte
  Rational delta_d = 0;  // ticks per response byte
  Rational K = 0;        // receiver service time
  // Evaluate N * delta_s == 0 as written instead of rejecting it.
  bool allow_zero_request = false;

  Rational request_demand() const { return Rational(N) * delta_s; }
  Rational response_demand() const { return Rational(M) * delta_d + K; }

  // Both the request and the response fit strictly inside one budget; the
  // regime the five-scenario analysis is derived for.
  bool single_period() const {
    return request_demand() > 0 && request_demand() < Rational(C_s) &&
           response_demand() > 0 && response_demand() < Rational(C_d);
  }

  // Convenience for callers that already know the per-message demands.
  static CommBoundInput from_demands(Tick c_s, Tick t_s, Tick c_d, Tick t_d, Rational request,
                                     Rational response) {
    CommBoundInput in;
    in.C_s = c_s;
    in.T_s = t_s;
    in.C_d = c_d;
    in.T_d = t_d;
    in.N = 1;
    in.M = 1;
    in.delta_s = request;
    in.delta_d = response;
    return in;
  }
};

struct CommBoundBreakdown {
  Rational L_s, L_d, S, D, R;
  Rational R_floor;
  Rational Q, P, B;
  Rational N_1, N_2, E;
  Rational W, W_shifted;              // published form
  Rational W_sound, W_shifted_sound;  // floor(R) + 1 receive window
  int case_id = 1;

  const Rational& worst(BoundForm form) const { return form == BoundForm::Sound ? W_sound : W; }
  const Rational& worst_shifted(BoundForm form) const {
    return form == BoundForm::Sound ? W_shifted_sound : W_shifted;
  }
};

// f(x) = 1 if x >= 1, else 0.
inline int step_f(const Rational& x) { return x >= 1 ? 1 : 0; }

namespace detail {

// f(num / den) with the zero-denominator conventions: f(Q / (T_s - C_s)) is
// 1 iff Q > 0 when T_s == C_s, and f((C_s - L_s) / P) is 1 iff C_s > L_s when
// P == 0.
inline int step_f_ratio(const Rational& num, const Rational& den) {
  if (den == 0) return num > 0 ? 1 : 0;
  return step_f(num / den);
}

inline void validate(const CommBoundInput& in) {
  if (in.C_s <= 0 || in.C_s > in.T_s) {
    throw SimError(ErrorCode::ValidationError, "require 0 < C_s <= T_s");
  }
  if (in.C_d <= 0 || in.C_d > in.T_d) {
    throw SimError(ErrorCode::ValidationError, "require 0 < C_d <= T_d");
  }
  if (in.N < 0 || in.M < 0 || in.delta_s < 0 || in.delta_d < 0 || in.K < 0) {
    throw SimError(ErrorCode::ValidationError, "message sizes and costs must be >= 0");
  }
  if (in.request_demand() == 0 && !in.allow_zero_request) {
    throw SimError(ErrorCode::DegenerateInput, "N * delta_s == 0");
  }
}

}  // namespace detail

inline CommBoundBreakdown comm_breakdown(const CommBoundInput& in) {
  detail::validate(in);
  const Rational Cs(in.C_s), Ts(in.T_s), Cd(in.C_d), Td(in.T_d);
  const Rational req = in.request_demand();
  const Rational resp = in.response_demand();

  CommBoundBreakdown b;
  b.L_s = Cs - mod(req, Cs);
  b.L_d = Cd - mod(resp, Cd);
  b.S = ceil(req / Cs) * Ts - b.L_s;
  b.D = ceil(resp / Cd) * Td - b.L_d;
  b.R = (b.D - b.L_s) / Ts;
  b.R_floor = floor(b.R);
  // Equivalent to (D - L_s) mod T_s, so Q stays in [0, T_s) even when D < L_s.
  b.Q = b.D - b.L_s - b.R_floor * Ts;
  b.P = b.Q - (Ts - Cs);

  const int f_q = detail::step_f_ratio(b.Q, Ts - Cs);
  b.B = Cs - Rational(f_q) * b.P;

  const int f_d = detail::step_f_ratio(b.D, b.L_s);
  const Rational base = b.S + b.D;
  b.W = base + Rational(f_d) * (b.L_s + b.R_floor * Ts - b.B - b.D);
  b.W_sound = base + Rational(f_d) * (b.L_s + (b.R_floor + 1) * Ts - b.B - b.D);

  const int f_p = detail::step_f_ratio(Cs - b.L_s, b.P);
  b.N_1 = Rational(1 - f_q) * min(b.Q, Cs - b.L_s);
  b.N_2 = Rational(f_q) * Rational(f_p) * min(Ts - Cs, Cs - b.L_s - b.P);
  b.E = max(b.N_1, b.N_2);

  b.W_shifted = b.W + b.E;
  b.W_shifted_sound = b.W_sound + b.E;

  // Diagnostic only: 1 when the reply lands inside the remaining budget; 2/4
  // when the sender is idle at reply time, 3/5 when it is mid-budget; 4/5
  // once at least one full sender period has elapsed.
  if (f_d == 0) {
    b.case_id = 1;
  } else {
    b.case_id = (f_q == 0 ? 2 : 3) + (b.R_floor >= 1 ? 2 : 0);
  }
  return b;
}

inline Rational worst_rtt(const CommBoundInput& in, BoundForm form = BoundForm::Published) {
  return comm_breakdown(in).worst(form);
}

inline Rational worst_rtt_shifted(const CommBoundInput& in, BoundForm form = BoundForm::Published) {
  return comm_breakdown(in).worst_shifted(form);
}

// ---------------------------------------------------------------------------
// Migration criterion

struct MigrationCriterionInput {
  Rational E_s;      // time to the migrating VCPU's next replenishment or wakeup
  Rational Delta_s;  // migration copy cost
  Rational C_m;
  Rational T_m;
};

// floor(Delta_s / C_m) * T_m + Delta_s mod C_m: the elapsed time for a
// migration thread with budget C_m per T_m to finish Delta_s of copy work.
inline Rational migration_bound(const Rational& delta_s, const Rational& c_m, const Rational& t_m) {
  if (delta_s < 0 || c_m <= 0 || t_m <= 0 || c_m > t_m) {
    throw SimError(ErrorCode::ValidationError, "require Delta_s >= 0 and 0 < C_m <= T_m");
  }
  return floor(delta_s / c_m) * t_m + mod(delta_s, c_m);
}

inline bool check_migration_criterion(const MigrationCriterionInput& in) {
  return in.E_s >= migration_bound(in.Delta_s, in.C_m, in.T_m);
}

// Clock-skew adjustment added to a migrated VCPU's pending event times.
constexpr Tick clock_adjustment(Tick tsc_d, Tick tsc_s, Tick rdtsc_cost, Tick ipi_cost) {
  return tsc_d - tsc_s - 2 * rdtsc_cost - ipi_cost;
}

}  // namespace mqsim::bounds
