#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mqsim/rational.hpp"
#include "mqsim/types.hpp"

namespace mqsim {

struct ExchangeProfile {
  std::int64_t N = 0;    // request bytes (a -> b)
  std::int64_t M = 0;    // response bytes (b -> a)
  Rational delta_s = 0;  // ticks per request byte
  Rational delta_d = 0;  // ticks per response byte
  Tick K = 0;            // receiver service time

  void validate() const {
    if (N < 0 || M < 0 || delta_s < 0 || delta_d < 0 || K < 0) {
      throw SimError(ErrorCode::ValidationError, "exchange profile values must be >= 0");
    }
  }

  // Execution time of a send; fractional costs round up to whole ticks.
  Tick request_cost() const { return static_cast<Tick>(ceil_int(Rational(N) * delta_s)); }
  Tick response_cost() const { return static_cast<Tick>(ceil_int(Rational(M) * delta_d)); }
};

// Depth-1 slot with a status bit.
struct Mailbox {
  bool full = false;
  std::int64_t payload_bytes = 0;
  Tick enqueue_time = 0;  // true time

  void put(std::int64_t bytes, Tick now) {
    if (full) throw SimError(ErrorCode::MailboxFull, "mailbox holds an undelivered message");
    full = true;
    payload_bytes = bytes;
    enqueue_time = now;
  }

  std::optional<std::int64_t> take() {
    if (!full) return std::nullopt;
    full = false;
    return payload_bytes;
  }
};

struct Endpoint {
  SandboxId sandbox;
  TaskId task;
};

// Two mailboxes in a page shared by exactly two sandboxes. `to_b` carries
// requests written by endpoint a; `to_a` carries responses.
struct Channel {
  ChannelId id;
  std::string name;
  Endpoint a, b;
  Mailbox to_a, to_b;
  ExchangeProfile profile;
  Tick poll_cost = 10;
  bool established = false;
  std::uint64_t sent = 0;
  std::uint64_t received = 0;

  bool is_endpoint(SandboxId sb) const { return sb == a.sandbox || sb == b.sandbox; }

  void check_access(SandboxId sb) const {
    if (!is_endpoint(sb)) {
      throw SimError(ErrorCode::AccessDenied,
                     "sandbox " + std::to_string(sb.value) + " is not an endpoint of channel " + name);
    }
  }

  Mailbox& outbox(SandboxId from) {
    check_access(from);
    return from == a.sandbox ? to_b : to_a;
  }
  Mailbox& inbox(SandboxId at) {
    check_access(at);
    return at == a.sandbox ? to_a : to_b;
  }

  Tick send_cost(SandboxId from) const {
    check_access(from);
    return from == a.sandbox ? profile.request_cost() : profile.response_cost();
  }
  std::int64_t send_bytes(SandboxId from) const { return from == a.sandbox ? profile.N : profile.M; }
  SandboxId peer(SandboxId sb) const { return sb == a.sandbox ? b.sandbox : a.sandbox; }
};

}  // namespace mqsim
