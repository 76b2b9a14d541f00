#pragma once

#include <string>
#include <variant>
#include <vector>

#include "mqsim/types.hpp"

namespace mqsim {

// Task behaviour is a small program that loops forever (or stops at the end
// when `repeat` is false).
namespace step {

struct Compute {
  Tick work = 0;
  bool counts = false;  // completion bumps the task's iteration counter
};
// Uniform work in [lo, hi], drawn from the task's seeded generator.
struct ComputeRandom {
  Tick lo = 0, hi = 0;
};
struct Send {
  ChannelId channel;
  bool begins_exchange = false;  // round-trip clock starts on arrival here
};
struct Poll {
  ChannelId channel;
  bool ends_exchange = false;  // round-trip clock stops at detection
};
// Receiver-side service time K of the channel.
struct Service {
  ChannelId channel;
};
struct Sleep {
  Tick duration = 0;
};
struct SleepRandom {
  Tick lo = 0, hi = 0;
};
// Sleep until the next multiple of `period` on the local clock.
struct Release {
  Tick period = 0;
};
// Scripted variants: the k-th visit uses values[k % size]. Used by sweeps
// that need exact control over each repetition.
struct ComputeSeq {
  std::vector<Tick> values;
  std::size_t next = 0;
};
// Sleep until values[k] past the next multiple of `period` (now included).
struct ReleaseSeq {
  Tick period = 0;
  std::vector<Tick> values;
  std::size_t next = 0;
};
struct Io {
  VcpuId io_vcpu;
  Tick cost = 0;
};

}  // namespace step

using Step = std::variant<step::Compute, step::ComputeRandom, step::Send, step::Poll, step::Service, step::Sleep,
                          step::SleepRandom, step::Release, step::ComputeSeq, step::ReleaseSeq, step::Io>;

struct Program {
  std::vector<Step> steps;
  bool repeat = true;

  bool empty() const { return steps.empty(); }
};

inline Program compute_loop(Tick iteration_cost) {
  return Program{{step::Compute{iteration_cost, true}}, true};
}

}  // namespace mqsim
