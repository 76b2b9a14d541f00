#pragma once

#include <cstdint>
#include <numeric>

#include "mqsim/analytic_bounds.hpp"
#include "mqsim/rational.hpp"

namespace mqsim::oracle {

// Exhaustive round-trip search under the contiguous budget-window model: each
// VCPU is a backlogged server that runs for C at a fixed offset of every
// period T. The sender's window opens at 0; the receiver's at phase phi.
//
// For every receiver phase phi in [0, T_d) and every sender start offset
// sigma in [0, C_s] (sigma == C_s is "start when the budget has just run
// out"), the exchange is replayed exactly:
//   request  needs N*delta_s of sender budget starting at sigma,
//   response needs M*delta_d + K of receiver budget once the request lands,
//   the reply is seen at the first instant the sender is inside a window.
// The largest (seen - sigma) is returned.
struct RttSearchResult {
  Rational observed_max = 0;
  Rational worst_phase = 0;
  Rational worst_offset = 0;
  std::uint64_t points = 0;
  bool resolution_too_coarse = false;
};

namespace detail {

struct Window {
  std::int64_t phase, C, T;

  std::int64_t offset(std::int64_t t) const {
    std::int64_t o = (t - phase) % T;
    return o < 0 ? o + T : o;
  }

  // First instant >= t at which the server can run.
  std::int64_t next_run(std::int64_t t) const {
    std::int64_t o = offset(t);
    return o < C ? t : t + (T - o);
  }

  // Completion time of `work` units of execution starting at t.
  std::int64_t finish(std::int64_t t, std::int64_t work) const {
    if (work <= 0) return t;
    std::int64_t o = offset(t);
    if (o < C) {
      std::int64_t avail = C - o;
      if (work <= avail) return t + work;
      work -= avail;
      t += T - o;
    } else {
      t += T - o;
    }
    // t is at a window start here.
    std::int64_t full = (work - 1) / C;
    return t + full * T + (work - full * C);
  }
};

inline BigInt lcm(const BigInt& a, const BigInt& b) { return a / boost::multiprecision::gcd(a, b) * b; }

}  // namespace detail

inline RttSearchResult brute_force_worst_rtt(const bounds::CommBoundInput& in, const Rational& resolution) {
  if (resolution <= 0) {
    throw SimError(ErrorCode::ValidationError, "resolution must be positive");
  }
  if (in.C_s <= 0 || in.C_s > in.T_s || in.C_d <= 0 || in.C_d > in.T_d) {
    throw SimError(ErrorCode::ValidationError, "require 0 < C <= T for both VCPUs");
  }
  const Rational req = in.request_demand();
  const Rational resp = in.response_demand();

  // Scale everything onto an integer grid.
  BigInt scale_big = detail::lcm(boost::multiprecision::denominator(req),
                                 boost::multiprecision::denominator(resp));
  scale_big = detail::lcm(scale_big, boost::multiprecision::denominator(resolution));
  const Rational scale(scale_big);
  auto scaled = [&](const Rational& v) { return to_int64(v * scale); };

  const std::int64_t Cs = scaled(in.C_s), Ts = scaled(in.T_s);
  const std::int64_t Cd = scaled(in.C_d), Td = scaled(in.T_d);
  const std::int64_t request = scaled(req), response = scaled(resp);
  const std::int64_t step = scaled(resolution);

  RttSearchResult result;
  std::int64_t g = std::gcd(std::gcd(std::gcd(Cs, Ts), std::gcd(Cd, Td)), std::gcd(request, response));
  if (g == 0) g = 1;
  result.resolution_too_coarse = step > g;

  const detail::Window sender{0, Cs, Ts};
  std::int64_t best = -1, best_phi = 0, best_sigma = 0;
  for (std::int64_t phi = 0; phi < Td; phi += step) {
    const detail::Window receiver{phi, Cd, Td};
    for (std::int64_t sigma = 0; sigma <= Cs; sigma += step) {
      std::int64_t sent = sender.finish(sigma, request);
      std::int64_t replied = receiver.finish(receiver.next_run(sent), response);
      std::int64_t seen = sender.next_run(replied);
      std::int64_t rtt = seen - sigma;
      ++result.points;
      if (rtt > best) {
        best = rtt;
        best_phi = phi;
        best_sigma = sigma;
      }
    }
  }
  result.observed_max = Rational(best) / scale;
  result.worst_phase = Rational(best_phi) / scale;
  result.worst_offset = Rational(best_sigma) / scale;
  return result;
}

}  // namespace mqsim::oracle
