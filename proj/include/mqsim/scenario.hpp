#pragma once

#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mqsim/rational.hpp"
#include "mqsim/simulation.hpp"

namespace mqsim {

// Scenario files are JSON with `"schema": 1`. Durations carry their unit in
// the key (`_ms`, `_us`, `_s`); numbers may also be given as strings such as
// "625/256" when an exact fraction is needed.

struct StepSpec {
  std::string op;
  Tick a = 0, b = 0;
  bool flag = false;
  std::string ref;  // channel or I/O VCPU name
};

struct ScenarioVcpu {
  std::string name;
  VcpuKind kind = VcpuKind::Main;
  Tick C = 0, T = 0;
  bool migration_thread = false;
};

struct ScenarioAddressSpace {
  std::string name;
  std::int64_t pages = 0, pdes = 0, tss_limit = 8;
};

struct ScenarioTask {
  std::string name, vcpu, address_space, metric;
  std::vector<StepSpec> program;
  bool repeat = true;
};

struct ScenarioSandbox {
  std::int32_t id = 0;
  std::string name;
  Tick clock_offset = 0;
  std::int64_t drift_ppm = 0;
  std::vector<ScenarioVcpu> vcpus;
  std::vector<ScenarioAddressSpace> address_spaces;
  std::vector<ScenarioTask> tasks;
};

struct ScenarioChannel {
  std::string name;
  std::int32_t a_sandbox = 0, b_sandbox = 0;
  std::string a_task, b_task;
  ExchangeProfile profile;
  std::optional<Tick> poll_cost;
};

struct ScenarioMigration {
  Tick at = 0;
  std::string task;
  std::int32_t from = 0, to = 0;
  MigrationMode mode = MigrationMode::Thread;
  Tick pde_extra_delay = 0;
  bool enabled = true;
};

struct Scenario {
  std::string name = "scenario";
  std::int64_t tick_ns = 1000;
  Tick run_until = 0;
  Tick sample_period = 0;
  std::uint64_t seed = 1;
  AdmissionPolicy admission = AdmissionPolicy::LiuLayland;
  CostModel cost;
  std::vector<ScenarioSandbox> sandboxes;
  std::vector<ScenarioChannel> channels;
  std::vector<ScenarioMigration> migrations;
  std::vector<std::string> warnings;
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void parse_fail(const std::string& path, const std::string& what) {
  throw SimError(ErrorCode::ParseError, path + ": " + what);
}

inline const json& field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) parse_fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) parse_fail(path + "." + key, "missing field");
  return *it;
}

inline Rational number(const json& v, const std::string& path) {
  std::optional<Rational> r;
  if (v.is_number_integer()) {
    r = Rational(v.get<std::int64_t>());
  } else if (v.is_number_float()) {
    // Shortest round-trip text keeps 79.8 as 798/10 rather than its binary value.
    r = parse_rational(v.dump());
  } else if (v.is_string()) {
    r = parse_rational(v.get<std::string>());
  }
  if (!r) parse_fail(path, "expected a number, got " + v.dump());
  return *r;
}

inline std::string text(const json& v, const std::string& path) {
  if (!v.is_string()) parse_fail(path, "expected a string");
  return v.get<std::string>();
}

inline bool flag(const json& j, const char* key, bool fallback, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_boolean()) parse_fail(path + "." + key, "expected true or false");
  return it->get<bool>();
}

inline std::int64_t integer(const json& v, const std::string& path) {
  Rational r = number(v, path);
  if (!is_integer(r)) parse_fail(path, "expected an integer");
  return to_int64(r);
}

// value * unit_ns expressed in ticks; must land on a whole tick.
inline Tick ticks(const Rational& value, std::int64_t unit_ns, std::int64_t tick_ns, const std::string& path) {
  Rational t = value * Rational(unit_ns) / Rational(tick_ns);
  if (!is_integer(t)) throw SimError(ErrorCode::ValidationError, path + " is not a whole number of ticks");
  return to_int64(t);
}

inline std::vector<StepSpec> parse_program(const json& arr, std::int64_t tick_ns, const std::string& path) {
  if (!arr.is_array()) parse_fail(path, "expected an array of steps");
  auto us = [&](const json& s, const char* key, const std::string& p) {
    return ticks(number(field(s, key, p), p + "." + key), 1000, tick_ns, p + "." + key);
  };
  std::vector<StepSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& s = arr[i];
    const std::string p = path + "[" + std::to_string(i) + "]";
    StepSpec st;
    st.op = text(field(s, "op", p), p + ".op");
    if (st.op == "compute") {
      st.a = us(s, "us", p);
      st.flag = flag(s, "counts", false, p);
    } else if (st.op == "compute_random" || st.op == "sleep_random") {
      st.a = us(s, "lo_us", p);
      st.b = us(s, "hi_us", p);
    } else if (st.op == "send") {
      st.ref = text(field(s, "channel", p), p + ".channel");
      st.flag = flag(s, "begins_exchange", false, p);
    } else if (st.op == "poll") {
      st.ref = text(field(s, "channel", p), p + ".channel");
      st.flag = flag(s, "ends_exchange", false, p);
    } else if (st.op == "service") {
      st.ref = text(field(s, "channel", p), p + ".channel");
    } else if (st.op == "sleep") {
      st.a = us(s, "us", p);
    } else if (st.op == "release") {
      st.a = us(s, "period_us", p);
    } else if (st.op == "io") {
      st.ref = text(field(s, "vcpu", p), p + ".vcpu");
      st.a = us(s, "us", p);
    } else {
      parse_fail(p + ".op", "unknown step '" + st.op + "'");
    }
    out.push_back(std::move(st));
  }
  return out;
}

inline void parse_cost(const json& j, CostModel& c, const std::string& path, std::int64_t tick_ns) {
  if (!j.is_object()) parse_fail(path, "expected an object");
  const std::pair<const char*, Tick*> keys[] = {
      {"rdtsc_us", &c.rdtsc_cost},           {"ipi_us", &c.ipi_cost},
      {"vmexit_us", &c.vmexit_cost},         {"vmentry_us", &c.vmentry_cost},
      {"page_copy_nocache_us", &c.page_copy_nocache}, {"page_copy_cache_us", &c.page_copy_cache},
      {"tss_copy_us", &c.tss_copy_cost},     {"pde_walk_us", &c.pde_walk_cost},
      {"migration_overhead_us", &c.migration_overhead}, {"poll_us", &c.poll_cost},
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const auto& [key, dst] : keys) {
      if (it.key() == key) {
        *dst = ticks(number(*it, path + "." + key), 1000, tick_ns, path + "." + key);
        known = true;
      }
    }
    if (!known) parse_fail(path + "." + it.key(), "unknown cost field");
  }
}

inline std::size_t line_of(const std::string& body, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < body.size(); ++i) line += body[i] == '\n';
  return line;
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& body) {
  using detail::field;
  using detail::json;
  using detail::number;
  using detail::text;
  json root;
  try {
    root = json::parse(body);
  } catch (const json::parse_error& e) {
    throw SimError(ErrorCode::ParseError,
                   "line " + std::to_string(detail::line_of(body, e.byte)) + ": " + e.what());
  }
  Scenario sc;
  if (detail::integer(field(root, "schema", "$"), "$.schema") != 1) {
    detail::parse_fail("$.schema", "only schema 1 is supported");
  }
  if (auto it = root.find("name"); it != root.end()) sc.name = text(*it, "$.name");
  if (auto it = root.find("tick_ns"); it != root.end()) sc.tick_ns = detail::integer(*it, "$.tick_ns");
  if (sc.tick_ns <= 0) throw SimError(ErrorCode::ValidationError, "tick_ns must be positive");
  const auto tick_ns = sc.tick_ns;
  auto seconds = [&](const json& v, const std::string& p) {
    return detail::ticks(number(v, p), 1'000'000'000, tick_ns, p);
  };
  sc.run_until = seconds(field(root, "run_until_s", "$"), "$.run_until_s");
  if (auto it = root.find("sample_period_s"); it != root.end()) {
    sc.sample_period = seconds(*it, "$.sample_period_s");
  } else {
    sc.sample_period = detail::ticks(1, 1'000'000'000, tick_ns, "$.sample_period_s");
  }
  if (auto it = root.find("seed"); it != root.end()) {
    sc.seed = static_cast<std::uint64_t>(detail::integer(*it, "$.seed"));
  }
  if (auto it = root.find("admission"); it != root.end()) {
    auto a = text(*it, "$.admission");
    if (a == "exact") {
      sc.admission = AdmissionPolicy::Exact;
    } else if (a == "liu-layland") {
      sc.admission = AdmissionPolicy::LiuLayland;
    } else {
      detail::parse_fail("$.admission", "expected 'liu-layland' or 'exact'");
    }
  }
  if (auto it = root.find("cost_model"); it != root.end()) {
    detail::parse_cost(*it, sc.cost, "$.cost_model", tick_ns);
  } else {
    sc.warnings.push_back("cost_model missing; defaults applied");
  }

  const auto& sbs = field(root, "sandboxes", "$");
  if (!sbs.is_array()) detail::parse_fail("$.sandboxes", "expected an array");
  for (std::size_t i = 0; i < sbs.size(); ++i) {
    const auto& s = sbs[i];
    const std::string p = "$.sandboxes[" + std::to_string(i) + "]";
    ScenarioSandbox sb;
    sb.id = static_cast<std::int32_t>(detail::integer(field(s, "id", p), p + ".id"));
    sb.name = s.contains("name") ? text(s["name"], p + ".name") : "sandbox" + std::to_string(sb.id);
    if (auto it = s.find("clock"); it != s.end()) {
      if (auto o = it->find("offset_us"); o != it->end()) {
        sb.clock_offset = detail::ticks(number(*o, p + ".clock.offset_us"), 1000, tick_ns, p + ".clock.offset_us");
      }
      if (auto d = it->find("drift_ppm"); d != it->end()) sb.drift_ppm = detail::integer(*d, p + ".clock.drift_ppm");
    }
    const auto& vs = field(s, "vcpus", p);
    if (!vs.is_array()) detail::parse_fail(p + ".vcpus", "expected an array");
    for (std::size_t k = 0; k < vs.size(); ++k) {
      const auto& v = vs[k];
      const std::string vp = p + ".vcpus[" + std::to_string(k) + "]";
      ScenarioVcpu out;
      out.name = text(field(v, "name", vp), vp + ".name");
      std::string kind = v.contains("kind") ? text(v["kind"], vp + ".kind") : "main";
      if (kind == "main") {
        out.kind = VcpuKind::Main;
      } else if (kind == "io") {
        out.kind = VcpuKind::Io;
      } else {
        detail::parse_fail(vp + ".kind", "expected 'main' or 'io'");
      }
      out.C = detail::ticks(number(field(v, "C_ms", vp), vp + ".C_ms"), 1'000'000, tick_ns, vp + ".C_ms");
      out.T = detail::ticks(number(field(v, "T_ms", vp), vp + ".T_ms"), 1'000'000, tick_ns, vp + ".T_ms");
      out.migration_thread = detail::flag(v, "migration_thread", false, vp);
      sb.vcpus.push_back(std::move(out));
    }
    if (auto it = s.find("address_spaces"); it != s.end()) {
      for (std::size_t k = 0; k < it->size(); ++k) {
        const auto& a = (*it)[k];
        const std::string ap = p + ".address_spaces[" + std::to_string(k) + "]";
        ScenarioAddressSpace as;
        as.name = text(field(a, "name", ap), ap + ".name");
        as.pages = detail::integer(field(a, "pages", ap), ap + ".pages");
        as.pdes = detail::integer(field(a, "pdes", ap), ap + ".pdes");
        if (a.contains("tss_limit")) as.tss_limit = detail::integer(a["tss_limit"], ap + ".tss_limit");
        sb.address_spaces.push_back(std::move(as));
      }
    }
    if (auto it = s.find("tasks"); it != s.end()) {
      for (std::size_t k = 0; k < it->size(); ++k) {
        const auto& t = (*it)[k];
        const std::string tp = p + ".tasks[" + std::to_string(k) + "]";
        ScenarioTask task;
        task.name = text(field(t, "name", tp), tp + ".name");
        task.vcpu = text(field(t, "vcpu", tp), tp + ".vcpu");
        if (t.contains("address_space")) task.address_space = text(t["address_space"], tp + ".address_space");
        task.metric = t.contains("metric") ? text(t["metric"], tp + ".metric") : "iterations";
        task.repeat = detail::flag(t, "repeat", true, tp);
        task.program = detail::parse_program(field(t, "program", tp), tick_ns, tp + ".program");
        sb.tasks.push_back(std::move(task));
      }
    }
    sc.sandboxes.push_back(std::move(sb));
  }

  if (auto it = root.find("channels"); it != root.end()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& c = (*it)[i];
      const std::string p = "$.channels[" + std::to_string(i) + "]";
      ScenarioChannel ch;
      ch.name = text(field(c, "name", p), p + ".name");
      const auto& a = field(c, "a", p);
      const auto& b = field(c, "b", p);
      ch.a_sandbox = static_cast<std::int32_t>(detail::integer(field(a, "sandbox", p + ".a"), p + ".a.sandbox"));
      ch.a_task = text(field(a, "task", p + ".a"), p + ".a.task");
      ch.b_sandbox = static_cast<std::int32_t>(detail::integer(field(b, "sandbox", p + ".b"), p + ".b.sandbox"));
      ch.b_task = text(field(b, "task", p + ".b"), p + ".b.task");
      ch.profile.N = detail::integer(field(c, "N", p), p + ".N");
      ch.profile.M = detail::integer(field(c, "M", p), p + ".M");
      // Per-byte costs are given in microseconds.
      ch.profile.delta_s = number(field(c, "delta_s_us", p), p + ".delta_s_us") * 1000 / Rational(tick_ns);
      ch.profile.delta_d = number(field(c, "delta_d_us", p), p + ".delta_d_us") * 1000 / Rational(tick_ns);
      if (c.contains("K_us")) ch.profile.K = detail::ticks(number(c["K_us"], p + ".K_us"), 1000, tick_ns, p + ".K_us");
      if (c.contains("poll_cost_us")) {
        ch.poll_cost = detail::ticks(number(c["poll_cost_us"], p + ".poll_cost_us"), 1000, tick_ns, p + ".poll_cost_us");
      }
      sc.channels.push_back(std::move(ch));
    }
  }

  if (auto it = root.find("migrations"); it != root.end()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& m = (*it)[i];
      const std::string p = "$.migrations[" + std::to_string(i) + "]";
      ScenarioMigration mig;
      mig.at = seconds(field(m, "at_s", p), p + ".at_s");
      mig.task = text(field(m, "task", p), p + ".task");
      mig.from = static_cast<std::int32_t>(detail::integer(field(m, "from", p), p + ".from"));
      mig.to = static_cast<std::int32_t>(detail::integer(field(m, "to", p), p + ".to"));
      std::string mode = m.contains("mode") ? text(m["mode"], p + ".mode") : "thread";
      if (mode == "thread") {
        mig.mode = MigrationMode::Thread;
      } else if (mode == "ipi-handler") {
        mig.mode = MigrationMode::IpiHandler;
      } else {
        detail::parse_fail(p + ".mode", "expected 'thread' or 'ipi-handler'");
      }
      if (m.contains("pde_extra_delay_us")) {
        mig.pde_extra_delay =
            detail::ticks(number(m["pde_extra_delay_us"], p + ".pde_extra_delay_us"), 1000, tick_ns, p + ".pde_extra_delay_us");
      }
      mig.enabled = detail::flag(m, "enabled", true, p);
      sc.migrations.push_back(std::move(mig));
    }
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SimError(ErrorCode::ParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Scenario sc = parse_scenario(ss.str());
  if (sc.name == "scenario") {
    auto slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    if (auto dot = base.rfind('.'); dot != std::string::npos) base.resize(dot);
    sc.name = base;
  }
  return sc;
}

inline SimConfig sim_config(const Scenario& sc) {
  SimConfig cfg;
  cfg.cost = sc.cost;
  cfg.admission = sc.admission;
  cfg.sample_period = sc.sample_period;
  cfg.tick_ns = sc.tick_ns;
  cfg.seed = sc.seed;
  return cfg;
}

// Resolves names, builds the simulation and checks local admission.
// Throws ValidationError naming the failed invariant.
inline std::unique_ptr<Simulation> build(const Scenario& sc, std::optional<SimConfig> override_cfg = std::nullopt) {
  auto fail = [](const std::string& what) { throw SimError(ErrorCode::ValidationError, what); };
  if (sc.run_until <= 0) fail("run_until_s must be positive");
  auto sim = std::make_unique<Simulation>(override_cfg.value_or(sim_config(sc)));

  std::map<std::string, std::set<std::string>> names;  // per kind
  auto unique = [&](const std::string& n, const char* kind) {
    if (!names[kind].insert(n).second) fail(std::string("duplicate ") + kind + " name '" + n + "'");
  };
  std::map<std::string, AddressSpaceId> spaces;
  std::map<std::string, std::int32_t> task_sandbox;

  for (const auto& s : sc.sandboxes) {
    sim->add_sandbox(SandboxId{s.id}, s.name, SandboxClock(s.clock_offset, s.drift_ppm));
    for (const auto& v : s.vcpus) {
      unique(v.name, "vcpu");
      try {
        sim->add_vcpu(SandboxId{s.id}, v.name, v.kind, v.C, v.T, v.migration_thread);
      } catch (const SimError& e) {
        fail("vcpu " + v.name + ": " + e.what());
      }
    }
    for (const auto& a : s.address_spaces) {
      unique(a.name, "address space");
      spaces[a.name] = sim->add_address_space(a.pages, a.pdes, a.tss_limit);
    }
    for (const auto& t : s.tasks) task_sandbox[t.name] = s.id;
  }

  // Channel ids follow declaration order, so programs can refer to them before
  // the endpoints exist.
  std::map<std::string, ChannelId> channel_ids;
  for (std::size_t i = 0; i < sc.channels.size(); ++i) {
    unique(sc.channels[i].name, "channel");
    channel_ids[sc.channels[i].name] = ChannelId{static_cast<std::int32_t>(i)};
  }

  for (const auto& s : sc.sandboxes) {
    for (const auto& t : s.tasks) {
      unique(t.name, "task");
      auto vid = sim->find_vcpu(t.vcpu);
      if (!vid || sim->vcpu(*vid).v.home != SandboxId{s.id}) {
        fail("task " + t.name + " names vcpu '" + t.vcpu + "' outside its sandbox");
      }
      Program prog;
      prog.repeat = t.repeat;
      for (const auto& st : t.program) {
        auto chan = [&]() {
          auto it = channel_ids.find(st.ref);
          if (it == channel_ids.end()) fail("task " + t.name + " uses unknown channel '" + st.ref + "'");
          return it->second;
        };
        if (st.op == "compute") {
          prog.steps.push_back(step::Compute{st.a, st.flag});
        } else if (st.op == "compute_random") {
          if (st.a > st.b) fail("task " + t.name + ": compute_random needs lo <= hi");
          prog.steps.push_back(step::ComputeRandom{st.a, st.b});
        } else if (st.op == "sleep_random") {
          if (st.a > st.b) fail("task " + t.name + ": sleep_random needs lo <= hi");
          prog.steps.push_back(step::SleepRandom{st.a, st.b});
        } else if (st.op == "send") {
          prog.steps.push_back(step::Send{chan(), st.flag});
        } else if (st.op == "poll") {
          prog.steps.push_back(step::Poll{chan(), st.flag});
        } else if (st.op == "service") {
          prog.steps.push_back(step::Service{chan()});
        } else if (st.op == "sleep") {
          prog.steps.push_back(step::Sleep{st.a});
        } else if (st.op == "release") {
          prog.steps.push_back(step::Release{st.a});
        } else if (st.op == "io") {
          auto io = sim->find_vcpu(st.ref);
          if (!io) fail("task " + t.name + " uses unknown I/O vcpu '" + st.ref + "'");
          prog.steps.push_back(step::Io{*io, st.a});
        }
      }
      AddressSpaceId as;
      if (!t.address_space.empty()) {
        auto it = spaces.find(t.address_space);
        if (it == spaces.end()) fail("task " + t.name + " names unknown address space '" + t.address_space + "'");
        as = it->second;
      }
      TaskId id;
      try {
        id = sim->add_task(t.name, *vid, std::move(prog), as);
      } catch (const SimError& e) {
        fail("task " + t.name + ": " + e.what());
      }
      sim->set_task_metric(id, t.metric);
    }
  }

  for (const auto& c : sc.channels) {
    auto a = sim->find_task(c.a_task);
    auto b = sim->find_task(c.b_task);
    if (!a || task_sandbox[c.a_task] != c.a_sandbox) fail("channel " + c.name + ": endpoint a does not resolve");
    if (!b || task_sandbox[c.b_task] != c.b_sandbox) fail("channel " + c.name + ": endpoint b does not resolve");
    ChannelId id;
    try {
      id = sim->establish_channel(c.name, {SandboxId{c.a_sandbox}, *a}, {SandboxId{c.b_sandbox}, *b}, c.profile,
                                  c.poll_cost);
    } catch (const SimError& e) {
      fail("channel " + c.name + ": " + e.what());
    }
    if (id != channel_ids[c.name]) fail("channel " + c.name + " duplicates an existing sandbox pair");
  }

  for (const auto& m : sc.migrations) {
    if (!m.enabled) continue;
    auto t = sim->find_task(m.task);
    if (!t) fail("migration names unknown task '" + m.task + "'");
    if (task_sandbox[m.task] != m.from) fail("migration of " + m.task + " does not start in sandbox " + std::to_string(m.from));
    if (m.from == m.to) fail("migration of " + m.task + " has the same source and destination");
    try {
      sim->schedule_migration({m.at, sim->task(*t).vcpu, SandboxId{m.to}, m.mode, m.pde_extra_delay});
    } catch (const SimError& e) {
      fail("migration of " + m.task + ": " + e.what());
    }
  }

  sim->check_admission();
  return sim;
}

}  // namespace mqsim
