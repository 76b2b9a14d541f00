#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mqsim/types.hpp"

namespace mqsim {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  static constexpr std::uint64_t kOffsetBasis = 14695981039346656037ull;
  static constexpr std::uint64_t kPrime = 1099511628211ull;

  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= kPrime;
    }
  }
  std::uint64_t value() const { return hash_; }

  static std::uint64_t of(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.value();
  }

 private:
  std::uint64_t hash_ = kOffsetBasis;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Formats a tick count as microseconds given the tick length.
inline std::string format_us(Tick t, std::int64_t tick_ns) {
  if (tick_ns == 1000) return std::to_string(t);
  __int128 ns = static_cast<__int128>(t) * tick_ns;
  bool neg = ns < 0;
  if (neg) ns = -ns;
  auto whole = static_cast<std::int64_t>(ns / 1000);
  auto frac = static_cast<int>(ns % 1000);
  std::string out = (neg ? "-" : "") + std::to_string(whole);
  if (frac != 0) {
    std::string f = std::to_string(frac);
    f.insert(0, 3 - f.size(), '0');
    while (f.back() == '0') f.pop_back();
    out += "." + f;
  }
  return out;
}

// Canonical CSV trace: `t_true_us,sandbox,event_kind,entity,detail`.
// The hash covers the header and every line including its trailing newline,
// whether or not lines are retained in memory.
class Trace {
 public:
  static constexpr std::string_view kHeader = "t_true_us,sandbox,event_kind,entity,detail";

  explicit Trace(bool keep_lines = true, std::int64_t tick_ns = 1000)
      : keep_lines_(keep_lines), tick_ns_(tick_ns) {
    hash_.update(kHeader);
    hash_.update("\n");
  }

  void record(Tick t_true, SandboxId sandbox, std::string_view kind, std::string_view entity,
              std::string_view detail) {
    std::string line = format_us(t_true, tick_ns_);
    line += ',';
    line += sandbox.valid() ? std::to_string(sandbox.value) : std::string("-");
    line += ',';
    append_field(line, kind);
    line += ',';
    append_field(line, entity);
    line += ',';
    append_field(line, detail);
    hash_.update(line);
    hash_.update("\n");
    ++count_;
    if (keep_lines_) lines_.push_back(std::move(line));
  }

  std::size_t size() const { return count_; }
  std::uint64_t hash() const { return hash_.value(); }
  const std::vector<std::string>& lines() const { return lines_; }
  bool keeps_lines() const { return keep_lines_; }

  void write_csv(std::ostream& out) const {
    out << kHeader << '\n';
    for (const auto& l : lines_) out << l << '\n';
  }

 private:
  static void append_field(std::string& line, std::string_view field) {
    for (char c : field) line += (c == ',' || c == '\n') ? ';' : c;
  }

  bool keep_lines_;
  std::int64_t tick_ns_;
  Fnv1a hash_;
  std::size_t count_ = 0;
  std::vector<std::string> lines_;
};

}  // namespace mqsim
