#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mqsim/rational.hpp"
#include "mqsim/vcpu.hpp"

namespace mqsim {

enum class AdmissionPolicy { LiuLayland, Exact };

struct AdmissionVerdict {
  bool accepted = false;
  Rational utilization_before = 0;
  Rational utilization_after = 0;
  // Liu-Layland: n(2^(1/n) - 1) rounded down to 1e-12; Exact: 1.
  Rational bound_used = 0;
};

struct ServerParams {
  Tick C = 0;
  Tick T = 0;
  PriorityKey key;
};

namespace detail {

inline Rational utilization(const std::vector<ServerParams>& set) {
  Rational u = 0;
  for (const auto& s : set) u += Rational(BigInt(s.C), BigInt(s.T));
  return u;
}

// U <= n(2^(1/n) - 1)  <=>  (U/n + 1)^n <= 2, evaluated exactly.
inline bool within_liu_layland(const Rational& u, std::size_t n) {
  if (n == 0) return true;
  Rational base = u / Rational(static_cast<std::int64_t>(n)) + 1;
  Rational p = 1;
  for (std::size_t i = 0; i < n; ++i) p *= base;
  return p <= 2;
}

inline Rational liu_layland_bound(std::size_t n) {
  if (n == 0) return 1;
  double b = static_cast<double>(n) * (std::pow(2.0, 1.0 / static_cast<double>(n)) - 1.0);
  auto scaled = static_cast<std::int64_t>(std::floor(b * 1e12));
  return rat(scaled, 1'000'000'000'000);
}

// Fixed-priority response-time test with implicit deadlines.
inline bool response_time_ok(std::vector<ServerParams> set) {
  std::sort(set.begin(), set.end(), [](const ServerParams& a, const ServerParams& b) { return a.key < b.key; });
  for (std::size_t i = 0; i < set.size(); ++i) {
    Tick r = set[i].C;
    for (;;) {
      Tick next = set[i].C;
      for (std::size_t j = 0; j < i; ++j) next += (r + set[j].T - 1) / set[j].T * set[j].C;
      if (next > set[i].T) return false;
      if (next == r) break;
      r = next;
    }
  }
  return true;
}

}  // namespace detail

inline AdmissionVerdict admit(const std::vector<ServerParams>& existing, const ServerParams& candidate,
                              AdmissionPolicy policy = AdmissionPolicy::LiuLayland) {
  if (candidate.T <= 0 || candidate.C <= 0 || candidate.C > candidate.T) {
    throw SimError(ErrorCode::MalformedVcpu, "candidate " + std::to_string(candidate.C) + "/" +
                                                 std::to_string(candidate.T));
  }
  std::vector<ServerParams> after = existing;
  after.push_back(candidate);

  AdmissionVerdict v;
  v.utilization_before = detail::utilization(existing);
  v.utilization_after = detail::utilization(after);
  if (policy == AdmissionPolicy::LiuLayland) {
    v.bound_used = detail::liu_layland_bound(after.size());
    v.accepted = detail::within_liu_layland(v.utilization_after, after.size());
  } else {
    v.bound_used = 1;
    v.accepted = v.utilization_after <= 1 && detail::response_time_ok(after);
  }
  return v;
}

inline ServerParams params_of(const Vcpu& v) { return {v.C(), v.T(), v.priority()}; }

inline std::string to_string(AdmissionPolicy p) {
  return p == AdmissionPolicy::Exact ? "exact" : "liu-layland";
}

}  // namespace mqsim
