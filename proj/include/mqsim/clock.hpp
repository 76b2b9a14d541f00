#pragma once

#include <cstdint>

#include "mqsim/types.hpp"

namespace mqsim {

// Per-sandbox timestamp counter. Sandboxes are not synchronized: each local
// clock runs ahead of true time by a constant offset plus a linear drift.
//
//   local(t) = t + offset + floor(t * drift_ppm / 10^6)
//
// Negative drift is rejected because a slower integer clock would repeat
// values and break strict monotonicity.
class SandboxClock {
 public:
  SandboxClock() = default;
  SandboxClock(Tick offset, std::int64_t drift_ppm) : offset_(offset), drift_ppm_(drift_ppm) {
    if (drift_ppm < 0) {
      throw SimError(ErrorCode::ValidationError, "drift_ppm must be non-negative");
    }
  }

  Tick offset() const { return offset_; }
  std::int64_t drift_ppm() const { return drift_ppm_; }

  Tick local_from_true(Tick t) const { return t + offset_ + drift(t); }

  // Earliest true time at which the local clock reads at least `local`.
  Tick true_from_local(Tick local) const {
    if (local == kNever) return kNever;
    if (drift_ppm_ == 0) return local - offset_;
    __int128 num = static_cast<__int128>(local - offset_) * kPpm;
    Tick t = static_cast<Tick>(num / (kPpm + drift_ppm_));
    while (local_from_true(t) < local) ++t;
    while (local_from_true(t - 1) >= local) --t;
    return t;
  }

 private:
  static constexpr std::int64_t kPpm = 1'000'000;

  Tick drift(Tick t) const {
    if (drift_ppm_ == 0) return 0;
    __int128 prod = static_cast<__int128>(t) * drift_ppm_;
    __int128 q = prod / kPpm;
    if (prod < 0 && q * kPpm != prod) --q;
    return static_cast<Tick>(q);
  }

  Tick offset_ = 0;
  std::int64_t drift_ppm_ = 0;
};

}  // namespace mqsim
