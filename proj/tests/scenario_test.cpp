#include <gtest/gtest.h>

#include <string>

#include "mqsim/experiments.hpp"
#include "mqsim/scenario.hpp"

using namespace mqsim;

namespace {

// Minimal valid document; `extra` is spliced in before the sandboxes.
std::string doc(const std::string& vcpu = R"({"name": "v", "C_ms": 2, "T_ms": 10})", const std::string& extra = "") {
  return R"({
  "schema": 1,
  "run_until_s": 1,
  )" + extra + R"(
  "sandboxes": [
    {"id": 1, "name": "one", "vcpus": [)" +
         vcpu + R"(],
     "tasks": [{"name": "t", "vcpu": "v", "program": [{"op": "compute", "us": 500}]}]}
  ]
})";
}

const std::string kCost = R"("cost_model": {"rdtsc_us": 1, "ipi_us": 100},)";

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const SimError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no SimError thrown";
  return ErrorCode::UnknownEntity;
}

}  // namespace

TEST(Scenario, BuiltInTableOneLoads) {
  Scenario sc = table1_scenario();
  EXPECT_EQ(sc.name, "table1");
  ASSERT_EQ(sc.sandboxes.size(), 2u);
  EXPECT_EQ(sc.sandboxes[0].vcpus.size(), 5u);
  // Sandbox 2 holds four and receives the migrating fifth.
  EXPECT_EQ(sc.sandboxes[1].vcpus.size(), 4u);
  EXPECT_TRUE(sc.warnings.empty());
  ASSERT_EQ(sc.migrations.size(), 1u);
  EXPECT_EQ(sc.migrations[0].at, 5'000'000);
  EXPECT_EQ(sc.migrations[0].mode, MigrationMode::Thread);
  auto sim = build(sc);
  auto canny = sim->find_vcpu("canny");
  ASSERT_TRUE(canny);
  EXPECT_EQ(sim->vcpu(*canny).v.C(), 20'000);
  EXPECT_EQ(sim->vcpu(*canny).v.T(), 100'000);
  EXPECT_EQ(sim->channels().size(), 1u);
}

TEST(Scenario, MinimalDocumentFillsDefaults) {
  Scenario sc = parse_scenario(doc(R"({"name": "v", "C_ms": 2, "T_ms": 10})", kCost));
  EXPECT_EQ(sc.tick_ns, 1000);
  EXPECT_EQ(sc.sample_period, 1'000'000);
  EXPECT_EQ(sc.run_until, 1'000'000);
  EXPECT_EQ(sc.cost.ipi_cost, 100);
  EXPECT_TRUE(sc.warnings.empty());
  EXPECT_NO_THROW(build(sc));
}

TEST(Scenario, MissingCostModelWarns) {
  Scenario sc = parse_scenario(doc());
  ASSERT_EQ(sc.warnings.size(), 1u);
  EXPECT_NE(sc.warnings[0].find("cost_model"), std::string::npos);
  EXPECT_EQ(sc.cost.page_copy_nocache, CostModel{}.page_copy_nocache);
}

TEST(Scenario, BudgetAboveItsPeriodIsRejected) {
  auto sc = [] { return build(parse_scenario(doc(R"({"name": "v", "C_ms": 12, "T_ms": 10})"))); };
  EXPECT_EQ(code_of(sc), ErrorCode::ValidationError);
}

TEST(Scenario, OverloadedSandboxFailsAdmission) {
  auto sc = parse_scenario(doc(R"({"name": "v", "C_ms": 6, "T_ms": 10}, {"name": "w", "C_ms": 6, "T_ms": 10})"));
  EXPECT_EQ(code_of([&] { build(sc); }), ErrorCode::ValidationError);
}

TEST(Scenario, SyntaxErrorsCarryTheLine) {
  std::string bad = "{\n  \"schema\": 1,\n  \"run_until_s\": 1,\n  oops\n}";
  try {
    parse_scenario(bad);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(Scenario, BadFieldsNameTheirPath) {
  try {
    parse_scenario(doc(R"({"name": "v", "C_ms": "two", "T_ms": 10})"));
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("C_ms"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([] { parse_scenario(R"({"schema": 2, "run_until_s": 1, "sandboxes": []})"); }),
            ErrorCode::ParseError);
}

TEST(Scenario, FractionalTicksAreRejected) {
  EXPECT_EQ(code_of([] { parse_scenario(doc(R"({"name": "v", "C_ms": "1/3000", "T_ms": 10})")); }),
            ErrorCode::ValidationError);
}

TEST(Scenario, UnknownReferencesFailToBuild) {
  std::string body = doc();
  body.replace(body.find("\"vcpu\": \"v\""), 11, "\"vcpu\": \"x\"");
  auto sc = parse_scenario(body);
  EXPECT_EQ(code_of([&] { build(sc); }), ErrorCode::ValidationError);
}

TEST(Scenario, MissingFileIsAParseError) {
  EXPECT_EQ(code_of([] { load_scenario("/nonexistent/none.json"); }), ErrorCode::ParseError);
}

TEST(Scenario, SameFileSameTrace) {
  auto a = run_scenario(table1_scenario(), 2'000'000);
  auto b = run_scenario(table1_scenario(), 2'000'000);
  EXPECT_EQ(a.sim->trace().hash(), b.sim->trace().hash());
  std::ostringstream ma, mb;
  write_metrics_csv(*a.sim, ma);
  write_metrics_csv(*b.sim, mb);
  EXPECT_EQ(ma.str(), mb.str());
}
