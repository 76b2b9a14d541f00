#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mqsim {

// Simulation time. One tick is one microsecond unless a scenario says otherwise.
using Tick = std::int64_t;

inline constexpr Tick kNever = std::numeric_limits<Tick>::max();

// Strongly typed identifiers. The value is the only state; ordering is by value
// so that std::map iteration is deterministic.
template <typename Tag>
struct Id {
  std::int32_t value{-1};

  constexpr Id() = default;
  constexpr explicit Id(std::int32_t v) : value(v) {}

  constexpr bool valid() const { return value >= 0; }
  constexpr auto operator<=>(const Id&) const = default;
};

struct SandboxTag {};
struct VcpuTag {};
struct TaskTag {};
struct ChannelTag {};
struct AddressSpaceTag {};
struct JobTag {};

using SandboxId = Id<SandboxTag>;
using VcpuId = Id<VcpuTag>;
using TaskId = Id<TaskTag>;
using ChannelId = Id<ChannelTag>;
using AddressSpaceId = Id<AddressSpaceTag>;
using JobId = Id<JobTag>;

enum class ErrorCode {
  PastTimestamp,
  UnknownSandbox,
  UnknownEntity,
  SelfIpi,
  MalformedVcpu,
  OverConsume,
  NotIoVcpu,
  SelfChannel,
  AccessDenied,
  MailboxFull,
  DegenerateInput,
  NotEligible,
  BlockedOnIo,
  DestinationBusy,
  ParseError,
  ValidationError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::PastTimestamp: return "PastTimestamp";
    case ErrorCode::UnknownSandbox: return "UnknownSandbox";
    case ErrorCode::UnknownEntity: return "UnknownEntity";
    case ErrorCode::SelfIpi: return "SelfIpi";
    case ErrorCode::MalformedVcpu: return "MalformedVcpu";
    case ErrorCode::OverConsume: return "OverConsume";
    case ErrorCode::NotIoVcpu: return "NotIoVcpu";
    case ErrorCode::SelfChannel: return "SelfChannel";
    case ErrorCode::AccessDenied: return "AccessDenied";
    case ErrorCode::MailboxFull: return "MailboxFull";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::NotEligible: return "NotEligible";
    case ErrorCode::BlockedOnIo: return "BlockedOnIo";
    case ErrorCode::DestinationBusy: return "DestinationBusy";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

class SimError : public std::runtime_error {
 public:
  SimError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mqsim

template <typename Tag>
struct std::hash<mqsim::Id<Tag>> {
  std::size_t operator()(const mqsim::Id<Tag>& id) const noexcept {
    return std::hash<std::int32_t>{}(id.value);
  }
};
