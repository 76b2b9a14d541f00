#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mqsim/acceptance.hpp"
#include "mqsim/analytic_bounds.hpp"
#include "mqsim/experiments.hpp"
#include "mqsim/rtt_oracle.hpp"

namespace fs = std::filesystem;
using namespace mqsim;
using nlohmann::json;

namespace {

constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Rational arg(const std::string& flag, const std::string& text) {
  auto v = parse_rational(text);
  if (!v) throw UsageError(flag + ": not a number: " + text);
  return *v;
}

Tick arg_ticks(const std::string& flag, const std::string& text) {
  Rational v = arg(flag, text);
  if (!is_integer(v)) throw UsageError(flag + " must be a whole number of ticks");
  return to_int64(v);
}

json num(const Rational& r) {
  if (is_integer(r)) return to_int64(r);
  return to_decimal(r, 6);
}

void print_job_lines(const Simulation& sim) {
  for (const auto& j : sim.jobs()) {
    std::cout << "  migration " << j.id.value << ": " << to_string(j.state) << ", E_s "
              << (j.E_s == kNever ? std::string("-") : to_decimal(Rational(j.E_s) / 1000, 3)) << " ms, worst "
              << to_decimal(Rational(j.delta_s_worst) / 1000, 3) << " ms, actual "
              << to_decimal(Rational(j.delta_s_actual) / 1000, 3) << " ms, criterion "
              << (j.criterion_ok ? "satisfied" : "violated") << '\n';
  }
}

int finish_run(const ScenarioRun& r, const fs::path& out) {
  write_outputs(*r.sim, r.scenario, out);
  for (const auto& w : r.scenario.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << r.scenario.name << ": " << r.sim->trace().size() << " trace lines, hash "
            << hex64(r.sim->trace().hash()) << " -> " << out.string() << '\n';
  print_job_lines(*r.sim);
  return 0;
}

// --- run -------------------------------------------------------------------

int cmd_run(const std::string& path, const std::optional<std::string>& until, const std::string& out) {
  Scenario sc = load_scenario(path);
  std::optional<Tick> stop;
  if (until) {
    Rational s = arg("--until", *until);
    Rational t = s * 1'000'000'000 / sc.tick_ns;
    if (!is_integer(t) || t < 0) throw UsageError("--until is not a whole number of ticks");
    stop = to_int64(t);
  }
  auto r = run_scenario(std::move(sc), stop);
  return finish_run(r, out.empty() ? fs::path("out") / r.scenario.name : fs::path(out));
}

// --- experiment ------------------------------------------------------------

int run_figure(Figure f, const fs::path& out) {
  auto on = run_scenario(figure_scenario(f, true));
  auto off = run_scenario(figure_scenario(f, false));
  finish_run(on, out / on.scenario.name);
  finish_run(off, out / off.scenario.name);
  return 0;
}

int run_fig12(const fs::path& out, const PingPongConfig& cfg) {
  fs::create_directories(out);
  std::ofstream rows(out / "fig12.csv");
  rows << "case,W,W_shifted,W_sound,W_shifted_sound,observed_max,ratio\n";
  std::cout << "case   W(ms)    W'(ms)   W'corr(ms) observed(ms) ratio\n";
  bool sound = true;
  for (const auto& c : pingpong_cases()) {
    auto r = run_pingpong(c, cfg);
    const auto& b = r.bound;
    auto msd = [](const Rational& x) { return to_decimal(x / 1000, 3); };
    rows << c.name << ',' << to_decimal(b.W, 3) << ',' << to_decimal(b.W_shifted, 3) << ',' << to_decimal(b.W_sound, 3)
         << ',' << to_decimal(b.W_shifted_sound, 3) << ',' << r.observed_max << ',' << to_decimal(r.ratio(), 4)
         << '\n';
    std::printf("%-6s %-8s %-8s %-10s %-12s %s\n", c.name.c_str(), msd(b.W).c_str(), msd(b.W_shifted).c_str(),
                msd(b.W_shifted_sound).c_str(), msd(Rational(r.observed_max)).c_str(),
                to_decimal(r.ratio(), 4).c_str());
    std::ofstream samples(out / ("rtt_" + c.name + ".csv"));
    samples << "exchange_idx,start_local_us,rtt_us\n";
    for (const auto& s : r.rtts) samples << s.index << ',' << s.start_local << ',' << s.rtt << '\n';
    sound = sound && Rational(r.observed_max) <= b.W_shifted_sound;
  }
  std::cout << "-> " << (out / "fig12.csv").string() << '\n';
  return sound ? 0 : 1;
}

int run_tables(const fs::path& out) {
  fs::create_directories(out);
  std::ofstream csv(out / "tables.csv");
  csv << "row,E_s_ms,delta_ms,C_m_ms,T_m_ms,bound_ms,verdict\n";
  for (const auto& r : criterion_table()) {
    const char* verdict = r.satisfied ? "eligible" : "violated";
    csv << '"' << r.label << "\"," << to_decimal(r.E_s, 1) << ',' << to_decimal(r.delta, 1) << ','
        << to_decimal(r.C_m, 1) << ',' << to_decimal(r.T_m, 1) << ',' << to_decimal(r.bound, 1) << ',' << verdict
        << '\n';
    std::cout << "delta " << to_decimal(r.delta, 1) << " ms -> bound " << to_decimal(r.bound, 1) << " ms vs E_s "
              << to_decimal(r.E_s, 1) << " ms: " << verdict << "  (" << r.label << ")\n";
  }
  return 0;
}

int cmd_experiment(const std::string& name, const std::string& out_arg, const PingPongConfig& cfg) {
  const fs::path out = out_arg.empty() ? fs::path("out") : fs::path(out_arg);
  if (name == "fig9") return run_figure(Figure::Fig9, out);
  if (name == "fig10") return run_figure(Figure::Fig10, out);
  if (name == "fig11") return run_figure(Figure::Fig11, out);
  if (name == "fig12") return run_fig12(out / "fig12", cfg);
  if (name == "tables") return run_tables(out / "tables");
  throw UsageError("unknown experiment: " + name);
}

// --- bounds ----------------------------------------------------------------

struct BoundsArgs {
  std::string cs, ts, cd, td, req, resp, k = "0";
  std::string delta, cm, tm, es;
  std::string tscd, tscs, rdtsc, ipi;
  bool oracle = false;
  std::string resolution = "1";
};

int bounds_comm(const BoundsArgs& a) {
  auto in = bounds::CommBoundInput::from_demands(arg_ticks("--cs", a.cs), arg_ticks("--ts", a.ts),
                                                 arg_ticks("--cd", a.cd), arg_ticks("--td", a.td), arg("--req", a.req),
                                                 arg("--resp", a.resp));
  in.K = arg("--k", a.k);
  auto b = bounds::comm_breakdown(in);
  json j = {{"L_s", num(b.L_s)}, {"L_d", num(b.L_d)},         {"S", num(b.S)},
            {"D", num(b.D)},     {"R", num(b.R)},             {"Q", num(b.Q)},
            {"P", num(b.P)},     {"B", num(b.B)},             {"N_1", num(b.N_1)},
            {"N_2", num(b.N_2)}, {"E", num(b.E)},             {"case", b.case_id},
            {"W", num(b.W)},     {"W_shifted", num(b.W_shifted)}, {"W_sound", num(b.W_sound)},
            {"W_shifted_sound", num(b.W_shifted_sound)}, {"single_period", in.single_period()}};
  for (const char* k : {"L_s", "L_d", "S", "D", "R", "Q", "P", "B", "N_1", "N_2", "E", "case", "W", "W_shifted",
                        "W_sound", "W_shifted_sound"}) {
    std::cout << k << " = " << (j[k].is_string() ? j[k].get<std::string>() : j[k].dump()) << '\n';
  }
  if (a.oracle) {
    auto r = oracle::brute_force_worst_rtt(in, arg("--resolution", a.resolution));
    j["oracle"] = {{"observed_max", num(r.observed_max)},
                   {"phase", num(r.worst_phase)},
                   {"offset", num(r.worst_offset)},
                   {"points", r.points},
                   {"resolution_too_coarse", r.resolution_too_coarse},
                   {"ratio_to_W_shifted", num(r.observed_max / b.W_shifted)},
                   {"ratio_to_W_shifted_sound", num(r.observed_max / b.W_shifted_sound)}};
    std::cout << "oracle = " << to_decimal(r.observed_max, 3) << " (phase " << to_decimal(r.worst_phase, 3)
              << ", offset " << to_decimal(r.worst_offset, 3) << ", " << r.points << " points)\n";
    std::cout << "oracle / W' = " << to_decimal(r.observed_max / b.W_shifted, 4)
              << ", oracle / W'corr = " << to_decimal(r.observed_max / b.W_shifted_sound, 4) << '\n';
    if (r.resolution_too_coarse) std::cout << "warning: resolution is coarser than the input grid\n";
  }
  std::cout << j.dump() << '\n';
  return 0;
}

int bounds_migration(const BoundsArgs& a) {
  const Rational delta = arg("--delta", a.delta), cm = arg("--cm", a.cm), tm = arg("--tm", a.tm);
  const Rational bound = bounds::migration_bound(delta, cm, tm);
  json j = {{"delta", num(delta)}, {"C_m", num(cm)}, {"T_m", num(tm)}, {"bound", num(bound)}};
  std::cout << "bound = " << to_decimal(bound, 3) << '\n';
  if (!a.es.empty()) {
    const Rational es = arg("--es", a.es);
    const bool ok = bounds::check_migration_criterion({es, delta, cm, tm});
    j["E_s"] = num(es);
    j["verdict"] = ok ? "satisfied" : "violated";
    std::cout << "E_s = " << to_decimal(es, 3) << ": " << (ok ? "satisfied" : "violated") << '\n';
  }
  std::cout << j.dump() << '\n';
  return 0;
}

int bounds_adjust(const BoundsArgs& a) {
  const Tick adj = bounds::clock_adjustment(arg_ticks("--tscd", a.tscd), arg_ticks("--tscs", a.tscs),
                                            arg_ticks("--rdtsc", a.rdtsc), arg_ticks("--ipi", a.ipi));
  std::cout << "delta_adj = " << adj << '\n' << json{{"delta_adj", adj}}.dump() << '\n';
  return 0;
}

// --- verify ----------------------------------------------------------------

int cmd_verify() {
  bool all = true;
  acceptance::run_all([&](const acceptance::Outcome& o) {
    std::cout << acceptance::format(o) << std::endl;
    all = all && o.pass;
  });
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic multikernel scheduling and migration simulator"};
  app.require_subcommand(1);

  std::string scenario, out, experiment;
  std::optional<std::string> until;
  auto* run = app.add_subcommand("run", "Run a scenario file");
  run->add_option("scenario", scenario, "scenario JSON")->required();
  run->add_option("--until", until, "stop time in seconds");
  run->add_option("--out", out, "output directory");

  PingPongConfig ppc;
  auto* exp = app.add_subcommand("experiment", "Run a built-in experiment");
  exp->add_option("name", experiment, "fig9 | fig10 | fig11 | fig12 | tables")
      ->required()
      ->check(CLI::IsMember({"fig9", "fig10", "fig11", "fig12", "tables"}));
  exp->add_option("--out", out, "output directory");
  exp->add_option("--resolution", ppc.resolution, "fig12 sweep grid step in us");
  exp->add_option("--exchanges", ppc.exchanges, "fig12 exchanges per case");
  exp->add_option("--seed", ppc.seed, "fig12 seed for points beyond the grid");

  BoundsArgs ba;
  auto* bnd = app.add_subcommand("bounds", "Evaluate an analytic bound");
  bnd->require_subcommand(1);
  auto* comm = bnd->add_subcommand("comm", "Round-trip bound");
  comm->add_option("--cs", ba.cs)->required();
  comm->add_option("--ts", ba.ts)->required();
  comm->add_option("--cd", ba.cd)->required();
  comm->add_option("--td", ba.td)->required();
  comm->add_option("--req", ba.req, "request demand N*delta_s")->required();
  comm->add_option("--resp", ba.resp, "response demand M*delta_d")->required();
  comm->add_option("--k", ba.k, "receiver service time");
  comm->add_flag("--oracle", ba.oracle, "also run the brute-force search");
  comm->add_option("--resolution", ba.resolution, "oracle step");
  auto* mig = bnd->add_subcommand("migration", "Migration criterion");
  mig->add_option("--delta", ba.delta)->required();
  mig->add_option("--cm", ba.cm)->required();
  mig->add_option("--tm", ba.tm)->required();
  mig->add_option("--es", ba.es);
  auto* adj = bnd->add_subcommand("adjust", "Clock-skew adjustment");
  adj->add_option("--tscd", ba.tscd)->required();
  adj->add_option("--tscs", ba.tscs)->required();
  adj->add_option("--rdtsc", ba.rdtsc)->required();
  adj->add_option("--ipi", ba.ipi)->required();

  app.add_subcommand("verify", "Run the acceptance checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*run) return cmd_run(scenario, until, out);
    if (*exp) return cmd_experiment(experiment, out, ppc);
    if (*comm) return bounds_comm(ba);
    if (*mig) return bounds_migration(ba);
    if (*adj) return bounds_adjust(ba);
    return cmd_verify();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const SimError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
