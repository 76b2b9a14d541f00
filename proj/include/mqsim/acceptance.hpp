#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mqsim/analytic_bounds.hpp"
#include "mqsim/experiments.hpp"
#include "mqsim/metrics.hpp"
#include "mqsim/rtt_oracle.hpp"

namespace mqsim::acceptance {

struct Outcome {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline std::string joined(const std::ostringstream& d) {
  std::string s = d.str();
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "; ") == 0) s.resize(s.size() - 2);
  return s;
}

inline std::string ms(Tick t) { return to_decimal(Rational(t) / 1000, 3) + " ms"; }

// Samples whose one-second window overlaps [from, to].
inline std::vector<std::size_t> samples_during(const Simulation& sim, Tick from, Tick to) {
  std::vector<std::size_t> out;
  const Tick p = sim.config().sample_period;
  for (std::size_t i = 0; (static_cast<Tick>(i) + 1) * p <= sim.now(); ++i) {
    const Tick lo = static_cast<Tick>(i) * p, hi = lo + p;
    if (hi > from && lo <= to) out.push_back(i);
  }
  return out;
}

inline const MigrationJob* last_job(const Simulation& sim) {
  return sim.jobs().empty() ? nullptr : &sim.jobs().back();
}

inline bool dips(const Simulation& on, const Simulation& off, std::string_view series, std::string_view entity,
                 const std::vector<std::size_t>& during) {
  auto a = series_values(on, series, entity);
  auto b = series_values(off, series, entity);
  for (std::size_t i : during) {
    if (i < a.size() && i < b.size() && a[i] < b[i]) return true;
  }
  return false;
}

inline Scenario skewed(Tick offset) {
  Scenario sc = figure_scenario(Figure::Fig9);
  sc.sandboxes.at(1).clock_offset = offset;
  sc.name = "fig9-skew" + std::to_string(offset);
  return sc;
}

}  // namespace detail

// --- 1 -------------------------------------------------------------------

inline Outcome criterion_1() {
  Outcome o{1, "migration criterion golden values"};
  const Rational E_s = rat(798, 10), C_m = 10, T_m = 50;
  struct Row {
    Rational delta, bound;
    bool eligible;
  };
  const Row rows[] = {{rat(54, 10), rat(54, 10), true},
                      {Rational(20), Rational(100), false},
                      {rat(264, 10), rat(1064, 10), false},
                      {rat(8914, 10), rat(44514, 10), false}};
  o.pass = true;
  std::ostringstream d;
  for (const auto& r : rows) {
    const Rational b = bounds::migration_bound(r.delta, C_m, T_m);
    const bool ok = bounds::check_migration_criterion({E_s, r.delta, C_m, T_m});
    d << to_decimal(r.delta, 1) << "->" << to_decimal(b, 1) << (ok ? " eligible" : " violated") << "; ";
    o.pass = o.pass && b == r.bound && ok == r.eligible;
  }
  o.detail = detail::joined(d);
  return o;
}

// --- 2 -------------------------------------------------------------------

inline Outcome criterion_2() {
  Outcome o{2, "round-trip worked example"};
  auto in = bounds::CommBoundInput::from_demands(2, 10, 3, 15, 5, 4);
  auto b = bounds::comm_breakdown(in);
  const bool analytic = b.L_s == 1 && b.L_d == 2 && b.S == 29 && b.D == 28 && b.Q == 7 && b.B == 2 && b.W == 48 &&
                        b.E == 1 && b.W_shifted == 49;
  auto r = oracle::brute_force_worst_rtt(in, Rational(1));
  const bool oracle_ok = r.observed_max >= 48 && r.observed_max <= 49;
  o.pass = analytic && oracle_ok;
  std::ostringstream d;
  d << "analytic " << (analytic ? "exact" : "MISMATCH") << " (W=" << to_decimal(b.W, 0)
    << " W'=" << to_decimal(b.W_shifted, 0) << "); oracle " << to_decimal(r.observed_max, 0)
    << (oracle_ok ? " in" : " outside") << " [48, 49]; corrected W'=" << to_decimal(b.W_shifted_sound, 0);
  o.detail = d.str();
  return o;
}

// --- 3 -------------------------------------------------------------------

inline Outcome criterion_3(int samples = 1000, std::uint64_t seed = 2024) {
  Outcome o{3, "bound dominates brute force on random inputs"};
  std::mt19937_64 rng(seed);
  auto U = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
  int violations = 0, published_violations = 0, checked = 0;
  while (checked < samples) {
    const Tick ts = U(2, 500), td = U(2, 500);
    const Tick cs = U(2, ts), cd = U(2, td);
    auto in = bounds::CommBoundInput::from_demands(cs, ts, cd, td, U(1, cs - 1), U(1, cd - 1));
    if (!in.single_period()) continue;
    ++checked;
    auto b = bounds::comm_breakdown(in);
    auto r = oracle::brute_force_worst_rtt(in, Rational(1));
    if (r.observed_max > b.W_shifted_sound) ++violations;
    if (r.observed_max > b.W_shifted) ++published_violations;
  }
  o.pass = violations == 0;
  o.detail = std::to_string(checked) + " inputs, " + std::to_string(violations) + " violations of corrected W' (" +
             std::to_string(published_violations) + " of the published W')";
  return o;
}

// --- 4 -------------------------------------------------------------------

inline Outcome criterion_4(const PingPongConfig& cfg = {}) {
  Outcome o{4, "round-trip sweep: sound and tight"};
  o.pass = true;
  std::ostringstream d;
  for (const auto& c : pingpong_cases()) {
    auto r = run_pingpong(c, cfg);
    const bool sound = Rational(r.observed_max) <= r.bound.W_shifted_sound;
    const bool tight = r.ratio() >= rat(85, 100);
    o.pass = o.pass && sound && tight;
    d << c.name << " " << detail::ms(r.observed_max) << "/" << to_decimal(r.bound.W_shifted_sound / 1000, 3)
      << " ratio " << to_decimal(r.ratio(), 3) << (sound ? "" : " UNSOUND") << "; ";
  }
  o.detail = detail::joined(d);
  return o;
}

// --- 5 -------------------------------------------------------------------

inline Outcome criterion_5() {
  Outcome o{5, "cheap migration leaves rates flat"};
  auto on = run_scenario(figure_scenario(Figure::Fig9, true));
  auto off = run_scenario(figure_scenario(Figure::Fig9, false));
  const auto* job = detail::last_job(*on.sim);
  double worst = 0;
  bool same_length = true;
  for (auto [series, entity] : {std::pair{"canny_fps_proxy", "canny"}, std::pair{"comm_throughput", "comms"}}) {
    auto a = series_values(*on.sim, series, entity);
    auto b = series_values(*off.sim, series, entity);
    same_length = same_length && a.size() == b.size() && !a.empty();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  const bool done = job && job->state == JobState::Completed && job->criterion_ok;
  o.pass = done && same_length && worst <= 1.0;
  o.detail = "job " + std::string(job ? to_string(job->state) : "missing") + ", worst |diff| " +
             std::to_string(static_cast<int>(worst)) + " sample quantum";
  return o;
}

// --- 6 -------------------------------------------------------------------

inline Outcome criterion_6() {
  Outcome o{6, "expensive migration (thread) hurts only the migrant"};
  auto on = run_scenario(figure_scenario(Figure::Fig10, true));
  auto off = run_scenario(figure_scenario(Figure::Fig10, false));
  const auto* job = detail::last_job(*on.sim);
  if (!job || job->state != JobState::Completed) {
    o.detail = "migration did not complete";
    return o;
  }
  const bool delta_ok = job->delta_s_actual >= 819'200 && job->delta_s_actual <= 900'000;
  auto during = detail::samples_during(*on.sim, job->requested_at, job->completed_at);
  const bool dip = detail::dips(*on.sim, *off.sim, "canny_fps_proxy", "canny", during);
  std::int64_t others = 0;
  for (const auto& vs : on.sim->vcpus()) {
    if (vs.v.name != "canny") others += vs.deadline_misses;
  }
  double util = 0;
  for (double u : series_values(*on.sim, "mig_thread_util", "sandbox2")) util = std::max(util, u);
  const bool util_ok = util >= 85.0 && util <= 95.0;
  o.pass = delta_ok && dip && others == 0 && util_ok;
  std::ostringstream d;
  d << "actual " << detail::ms(job->delta_s_actual) << ", migrant dip " << (dip ? "yes" : "no")
    << ", bystander misses " << others << ", peak util " << util << "%";
  o.detail = d.str();
  return o;
}

// --- 7 -------------------------------------------------------------------

inline Outcome criterion_7() {
  Outcome o{7, "expensive migration (handler) hurts bystanders"};
  auto on = run_scenario(figure_scenario(Figure::Fig11, true));
  auto off = run_scenario(figure_scenario(Figure::Fig11, false));
  const auto* job = detail::last_job(*on.sim);
  if (!job || job->state != JobState::Completed) {
    o.detail = "migration did not complete";
    return o;
  }
  std::int64_t others = 0;
  for (const auto& vs : on.sim->vcpus()) {
    if (vs.v.name != "canny") others += vs.deadline_misses;
  }
  auto during = detail::samples_during(*on.sim, job->requested_at, job->completed_at);
  const bool dip = detail::dips(*on.sim, *off.sim, "comm_throughput", "comms", during);
  o.pass = others >= 1 && dip;
  o.detail = "bystander misses " + std::to_string(others) + ", comms dip " + (dip ? "yes" : "no");
  return o;
}

// --- 8 -------------------------------------------------------------------

inline Outcome criterion_8() {
  Outcome o{8, "clock skew is compensated"};
  auto base = run_scenario(figure_scenario(Figure::Fig9));
  const auto& cost = base.sim->config().cost;
  const Tick tolerance = 2 * cost.rdtsc_cost + cost.ipi_cost;
  const auto* job = detail::last_job(*base.sim);
  const auto canny = base.sim->find_vcpu("canny");
  if (!job || job->state != JobState::Completed || !canny) {
    o.detail = "control migration did not complete";
    return o;
  }
  auto after = [&](const Simulation& s) {
    std::vector<Tick> t;
    for (const auto& f : s.firings()) {
      if (f.vcpu == *canny && f.t > job->completed_at) t.push_back(f.t);
    }
    return t;
  };
  const auto ref = after(*base.sim);
  o.pass = !ref.empty();
  std::ostringstream d;
  for (Tick offset : {Tick{10'000}, Tick{-10'000}}) {
    auto run = run_scenario(detail::skewed(offset));
    const auto got = after(*run.sim);
    Tick worst = 0;
    const bool aligned = got.size() == ref.size();
    for (std::size_t i = 0; aligned && i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
    const auto* j = detail::last_job(*run.sim);
    o.pass = o.pass && aligned && worst <= tolerance;
    d << (offset > 0 ? "+" : "") << offset / 1000 << " ms: adj " << (j ? j->delta_adj : 0) << " us, "
      << ref.size() << " firings, max diff " << (aligned ? std::to_string(worst) : "n/a") << "; ";
  }
  d << "tolerance " << tolerance;
  o.detail = d.str();
  return o;
}

// --- 9 -------------------------------------------------------------------

inline std::vector<Scenario> suite() {
  std::vector<Scenario> out{table1_scenario()};
  for (Figure f : {Figure::Fig9, Figure::Fig10, Figure::Fig11}) {
    out.push_back(figure_scenario(f, true));
    out.push_back(figure_scenario(f, false));
  }
  out.push_back(detail::skewed(10'000));
  out.push_back(detail::skewed(-10'000));
  return out;
}

inline Outcome criterion_9() {
  Outcome o{9, "budget law and replenishment conservation"};
  o.pass = true;
  std::int64_t windows = 0;
  std::ostringstream bad;
  const auto all = suite();
  for (const auto& sc : all) {
    auto run = run_scenario(sc);
    auto law = scan_sliding_window(*run.sim);
    auto cons = check_conservation(*run.sim);
    windows += law.windows_checked;
    if (!law.ok()) bad << sc.name << ": " << law.violations.size() << " window violations; ";
    if (!cons.ok()) bad << sc.name << ": " << cons.failures.front() << "; ";
    o.pass = o.pass && law.ok() && cons.ok();
  }
  o.detail = std::to_string(all.size()) + " scenarios, " + std::to_string(windows) + " windows" +
             (o.pass ? "" : "; " + bad.str());
  return o;
}

// --- 10 ------------------------------------------------------------------

inline Outcome criterion_10() {
  Outcome o{10, "reruns reproduce the trace hash"};
  o.pass = true;
  int compared = 0;
  for (const auto& sc : suite()) {
    auto a = run_scenario(sc);
    auto b = run_scenario(sc);
    o.pass = o.pass && a.sim->trace().hash() == b.sim->trace().hash();
    ++compared;
  }
  PingPongConfig cfg;
  for (const auto& c : pingpong_cases()) {
    o.pass = o.pass && run_pingpong(c, cfg).trace_hash == run_pingpong(c, cfg).trace_hash;
    ++compared;
  }
  o.detail = std::to_string(compared) + " runs compared";
  return o;
}

struct Entry {
  std::function<Outcome()> run;
  double limit_seconds;  // 0: no limit
};

inline std::vector<Entry> entries() {
  return {{criterion_1, 1},         {criterion_2, 1},  {[] { return criterion_3(); }, 120},
          {[] { return criterion_4(); }, 300}, {criterion_5, 30}, {criterion_6, 0},
          {criterion_7, 0},         {criterion_8, 0},  {criterion_9, 60},
          {criterion_10, 0}};
}

// Runs every criterion; a criterion over its time limit fails.
inline std::vector<Outcome> run_all(const std::function<void(const Outcome&)>& on_done = {}) {
  std::vector<Outcome> out;
  for (const auto& e : entries()) {
    const auto start = detail::Clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("error: ") + ex.what();
    }
    o.seconds = std::chrono::duration<double>(detail::Clock::now() - start).count();
    if (o.id == 0) o.id = static_cast<int>(out.size()) + 1;
    if (e.limit_seconds > 0 && o.seconds > e.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(e.limit_seconds)) + " s limit";
    }
    if (on_done) on_done(o);
    out.push_back(std::move(o));
  }
  return out;
}

inline std::string format(const Outcome& o) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.2fs", o.seconds);
  return "criterion " + std::to_string(o.id) + ": " + (o.pass ? "PASS" : "FAIL") + " - " + o.title + " (" +
         o.detail + ") [" + secs + "]";
}

}  // namespace mqsim::acceptance
