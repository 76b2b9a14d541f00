#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mqsim/analytic_bounds.hpp"
#include "mqsim/metrics.hpp"
#include "mqsim/scenario.hpp"
#include "mqsim/simulation.hpp"

#ifndef MQSIM_SCENARIO_DIR
#define MQSIM_SCENARIO_DIR "scenarios"
#endif

namespace mqsim {

inline std::string scenario_path(std::string_view name) {
  return std::string(MQSIM_SCENARIO_DIR) + "/" + std::string(name) + ".json";
}

inline Scenario table1_scenario() { return load_scenario(scenario_path("table1")); }

enum class Figure { Fig9, Fig10, Fig11 };

inline constexpr Tick kBusyWaitPerPde = 800;  // us, fig10/fig11 fault injection

inline Scenario figure_scenario(Figure f, bool migrate = true) {
  Scenario sc = table1_scenario();
  auto& m = sc.migrations.at(0);
  m.enabled = migrate;
  const Tick per_us = 1000 / sc.tick_ns;
  switch (f) {
    case Figure::Fig9:
      sc.name = "fig9";
      break;
    case Figure::Fig10:
      sc.name = "fig10";
      m.pde_extra_delay = kBusyWaitPerPde * per_us;
      break;
    case Figure::Fig11:
      sc.name = "fig11";
      m.pde_extra_delay = kBusyWaitPerPde * per_us;
      m.mode = MigrationMode::IpiHandler;
      break;
  }
  if (!migrate) sc.name += "-control";
  return sc;
}

struct ScenarioRun {
  Scenario scenario;
  std::unique_ptr<Simulation> sim;
};

inline ScenarioRun run_scenario(Scenario sc, std::optional<Tick> until = std::nullopt) {
  ScenarioRun r{std::move(sc), nullptr};
  r.sim = build(r.scenario);
  r.sim->run_until(until.value_or(r.scenario.run_until));
  return r;
}

// --- artifacts --------------------------------------------------------------

inline nlohmann::json job_summary(const MigrationJob& j, std::int64_t tick_ns) {
  auto ms = [&](Tick t) { return to_double(Rational(t) * Rational(tick_ns) / Rational(1'000'000)); };
  nlohmann::json o;
  o["job"] = j.id.value;
  o["mode"] = std::string(to_string(j.mode));
  o["state"] = std::string(to_string(j.state));
  o["source"] = j.source.value;
  o["destination"] = j.destination.value;
  o["E_s_ms"] = j.E_s == kNever ? nlohmann::json(nullptr) : nlohmann::json(ms(j.E_s));
  o["delta_s_worst_ms"] = ms(j.delta_s_worst);
  o["delta_s_actual_ms"] = ms(j.delta_s_actual);
  o["overhead_ms"] = ms(j.overhead_total);
  o["C_m_ms"] = ms(j.C_m);
  o["T_m_ms"] = ms(j.T_m);
  o["criterion"] = j.criterion_ok ? "satisfied" : "violated";
  o["activations"] = j.activations;
  o["max_overrun_us"] = j.max_overrun;
  o["delta_adj_ticks"] = j.delta_adj;
  o["requested_at_s"] = ms(j.requested_at) / 1000.0;
  o["completed_at_s"] = j.state == JobState::Completed ? nlohmann::json(ms(j.completed_at) / 1000.0) : nlohmann::json(nullptr);
  o["admission_utilization"] = to_decimal(j.verdict.utilization_after, 4);
  return o;
}

inline nlohmann::json run_summary(const Simulation& sim, const Scenario& sc) {
  nlohmann::json s;
  s["scenario"] = sc.name;
  s["tick_ns"] = sc.tick_ns;
  s["run_until_ticks"] = sim.now();
  s["trace_hash"] = hex64(sim.trace().hash());
  s["trace_lines"] = sim.trace().size();
  s["warnings"] = sc.warnings;
  s["migrations"] = nlohmann::json::array();
  for (const auto& j : sim.jobs()) s["migrations"].push_back(job_summary(j, sc.tick_ns));
  nlohmann::json misses = nlohmann::json::object();
  for (const auto& vs : sim.vcpus()) misses[vs.v.name] = vs.deadline_misses;
  s["deadline_misses"] = misses;
  nlohmann::json chans = nlohmann::json::array();
  for (const auto& ch : sim.channels()) {
    chans.push_back({{"name", ch.name}, {"sent", ch.sent}, {"received", ch.received}});
  }
  s["channels"] = chans;
  auto law = scan_sliding_window(sim);
  auto cons = check_conservation(sim);
  s["budget_law_ok"] = law.ok();
  s["conservation_ok"] = cons.ok();
  return s;
}

inline void write_metrics_csv(const Simulation& sim, std::ostream& out) {
  out << "t_s,series,entity,value\n";
  for (const auto& m : sim.metrics()) {
    out << to_decimal(Rational(m.t) * Rational(sim.config().tick_ns) / Rational(1'000'000'000), 3) << ',' << m.series << ',' << m.entity << ',';
    // Integers print bare; ratios keep three decimals.
    if (m.value == static_cast<double>(static_cast<std::int64_t>(m.value))) {
      out << static_cast<std::int64_t>(m.value);
    } else {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", m.value);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_outputs(const Simulation& sim, const Scenario& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "metrics.csv");
    write_metrics_csv(sim, f);
  }
  {
    std::ofstream f(dir / "trace.csv");
    sim.trace().write_csv(f);
  }
  {
    std::ofstream f(dir / "summary.json");
    f << run_summary(sim, sc).dump(2) << '\n';
  }
}

// --- fig12: round-trip sweeps ----------------------------------------------

struct PingPongCase {
  std::string name;
  Tick C_s = 0, T_s = 0, C_d = 0, T_d = 0;
};

// Sender 20/100 ms against five receivers (1 tick = 1 us).
inline std::vector<PingPongCase> pingpong_cases() {
  constexpr Tick ms = 1000;
  return {{"case1", 20 * ms, 100 * ms, 2 * ms, 10 * ms},
          {"case2", 20 * ms, 100 * ms, 20 * ms, 100 * ms},
          {"case3", 20 * ms, 100 * ms, 20 * ms, 130 * ms},
          {"case4", 20 * ms, 100 * ms, 20 * ms, 200 * ms},
          {"case5", 20 * ms, 100 * ms, 20 * ms, 230 * ms}};
}

struct PingPongConfig {
  std::int64_t N = 2048;
  std::int64_t M = 2048;
  Rational delta_s{625, 256};  // 2 KB costs 5 ms
  Rational delta_d{625, 256};
  Tick K = 0;
  Tick poll_cost = 10;
  std::int64_t exchanges = 10000;
  std::uint64_t seed = 12;
  // Each exchange runs in its own epoch with both budgets full. The receiver
  // wakes at phase phi in [0, T_d) and the sender, waking at T_d, computes
  // sigma in [0, C_s] before sending. (phi, sigma) walk a grid with this
  // step, then seeded random points fill the remaining exchanges.
  // Off: free-running back-to-back exchanges.
  bool sweep = true;
  Tick resolution = 1000;
};

struct PingPongResult {
  PingPongCase c;
  bounds::CommBoundBreakdown bound;  // receiver service term includes the poll cost
  Tick observed_max = 0;
  std::vector<RttSample> rtts;
  std::uint64_t trace_hash = 0;
  Rational ratio() const {
    return bound.W_shifted_sound == 0 ? Rational(0) : Rational(observed_max) / bound.W_shifted_sound;
  }
};

inline bounds::CommBoundInput pingpong_bound_input(const PingPongCase& c, const PingPongConfig& cfg) {
  bounds::CommBoundInput in;
  in.C_s = c.C_s;
  in.T_s = c.T_s;
  in.C_d = c.C_d;
  in.T_d = c.T_d;
  in.N = cfg.N;
  in.M = cfg.M;
  in.delta_s = cfg.delta_s;
  in.delta_d = cfg.delta_d;
  in.K = Rational(cfg.K + cfg.poll_cost);
  return in;
}

inline PingPongResult run_pingpong(const PingPongCase& c, const PingPongConfig& cfg) {
  PingPongResult out;
  out.c = c;
  out.bound = bounds::comm_breakdown(pingpong_bound_input(c, cfg));
  if (cfg.exchanges <= 0) return out;

  SimConfig sc;
  sc.seed = cfg.seed;
  sc.keep_trace_lines = false;
  sc.record_execution = false;
  sc.trace_copy_chunks = false;
  sc.sample_period = 1'000'000;
  Simulation sim(sc);
  SandboxId s1{1}, s2{2};
  sim.add_sandbox(s1, "sender");
  sim.add_sandbox(s2, "receiver");
  auto vs = sim.add_vcpu(s1, "sender", VcpuKind::Main, c.C_s, c.T_s);
  auto vd = sim.add_vcpu(s2, "receiver", VcpuKind::Main, c.C_d, c.T_d);
  const ChannelId ch{0};
  Program sender, receiver;
  if (cfg.sweep) {
    if (cfg.resolution <= 0) throw SimError(ErrorCode::ValidationError, "sweep resolution must be positive");
    const auto n = static_cast<std::size_t>(cfg.exchanges);
    const Tick phis = (c.T_d + cfg.resolution - 1) / cfg.resolution;
    const Tick sigmas = c.C_s / cfg.resolution + 1;
    const auto grid = static_cast<std::size_t>(phis * sigmas);
    std::vector<Tick> phi, sigma;
    phi.reserve(n);
    sigma.reserve(n);
    auto grid_point = [&](std::size_t g) {
      phi.push_back(static_cast<Tick>(g) / sigmas * cfg.resolution);
      sigma.push_back(std::min(c.C_s, static_cast<Tick>(g) % sigmas * cfg.resolution));
    };
    if (grid >= n) {
      // Too many points: take them evenly.
      for (std::size_t i = 0; i < n; ++i) grid_point(i * grid / n);
    } else {
      for (std::size_t g = 0; g < grid; ++g) grid_point(g);
      std::mt19937_64 rng(cfg.seed);
      std::uniform_int_distribution<Tick> dphi(0, c.T_d - 1), dsig(0, c.C_s);
      while (phi.size() < n) {
        phi.push_back(dphi(rng));
        sigma.push_back(dsig(rng));
      }
    }
    // Long enough for both servers to be fully replenished before the next
    // epoch whatever the exchange did.
    const auto worst = static_cast<Tick>(ceil_int(out.bound.W_shifted_sound));
    const Tick period = ((c.T_s + 2 * c.T_d + c.C_s + worst) / 1000 + 1) * 1000;
    sender.steps.push_back(step::ReleaseSeq{period, {c.T_d}});
    sender.steps.push_back(step::ComputeSeq{std::move(sigma)});
    receiver.steps.push_back(step::ReleaseSeq{period, std::move(phi)});
  }
  sender.steps.push_back(step::Send{ch, true});
  sender.steps.push_back(step::Poll{ch, true});
  receiver.steps.push_back(step::Poll{ch, false});
  receiver.steps.push_back(step::Service{ch});
  receiver.steps.push_back(step::Send{ch, false});
  auto ts = sim.add_task("sender", vs, sender);
  auto td = sim.add_task("receiver", vd, receiver);
  ExchangeProfile prof{cfg.N, cfg.M, cfg.delta_s, cfg.delta_d, cfg.K};
  sim.establish_channel("pingpong", {s1, ts}, {s2, td}, prof, cfg.poll_cost);

  const Tick slice = 1000 * c.T_s;
  while (sim.task(ts).exchanges < cfg.exchanges) sim.run_until(sim.now() + slice);
  const auto& rtts = sim.task(ts).rtts;
  out.rtts.assign(rtts.begin(), rtts.begin() + cfg.exchanges);
  for (const auto& r : out.rtts) out.observed_max = std::max(out.observed_max, r.rtt);
  out.trace_hash = sim.trace().hash();
  return out;
}

// --- tables: migration criterion verdicts ----------------------------------

struct CriterionRow {
  std::string label;
  Rational E_s, delta, C_m, T_m;
  Rational bound;
  bool satisfied = false;
};

// Inputs in milliseconds.
inline std::vector<CriterionRow> criterion_table() {
  struct In {
    const char* label;
    Rational delta;
  };
  const Rational E_s = rat(798, 10), C_m = 10, T_m = 50;
  std::vector<CriterionRow> rows;
  for (const In& in : {In{"no added overhead", rat(54, 10)}, In{"first violating cost", Rational(20)},
                       In{"first visible drop", rat(264, 10)}, In{"800 us per PDE", rat(8914, 10)}}) {
    CriterionRow r;
    r.label = in.label;
    r.E_s = E_s;
    r.delta = in.delta;
    r.C_m = C_m;
    r.T_m = T_m;
    r.bound = bounds::migration_bound(in.delta, C_m, T_m);
    r.satisfied = bounds::check_migration_criterion({E_s, in.delta, C_m, T_m});
    rows.push_back(r);
  }
  return rows;
}

}  // namespace mqsim
