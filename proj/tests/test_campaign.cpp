#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adcfaultlab/campaign.hpp"

using namespace adcfaultlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / "adcfaultlab_tests" /
               (std::string(info->test_suite_name()) + "." + info->name()) / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A dozen faults spread over several components, opens and shorts both.
CampaignConfig small_config() {
  CampaignConfig c;
  c.faults = std::vector<std::string>{
      "COM0_M0_OC_G",  "COM0_M5_SC_DS", "COM1_M3_OC_D",          "COM2_M1_SC_GS",
      "COM3_M6_OC_S",  "COM4_M2_SC_GD", "ControlBlock_MT0_OC_D", "ControlBlock_MTA0_SC_DS",
      "INV0_M_OC_G",   "INV1_M_SC_DS",  "COM4_M4_OC_G",          "ControlBlock_MT6_SC_GS"};
  return c;
}

CampaignRecord synthetic_record(const FaultDescriptor& f, FaultClass cls) {
  CampaignRecord r;
  r.id = f.id;
  r.set = single_fault(f);
  r.cls = cls;
  r.dnl.max_abs_dnl = cls == FaultClass::Benign ? 0.1 : 2.0;
  return r;
}

}  // namespace

TEST(CampaignConfig, JsonRoundTrip) {
  CampaignConfig c = small_config();
  c.mode = CampaignMode::Multi;
  c.seed = 9;
  c.caps = {3, MultiFaultCaps::kUnlimited, 5, 3};
  c.resistances.r_open = 1e9;
  c.scope = "COM3";
  c.conversion.steps_per_code = 16;
  c.solver.model.kp = 5e-3;
  const CampaignConfig back = config_from_json(config_echo(c));
  EXPECT_EQ(config_echo(back), config_echo(c));
  EXPECT_EQ(back.caps, c.caps);
  EXPECT_EQ(back.faults, c.faults);
}

TEST(CampaignConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json({{"desing", "baseline"}}), CampaignError);
  EXPECT_THROW(config_from_json({{"mode", "double"}}), CampaignError);
  CampaignConfig c;
  c.workers = 0;
  EXPECT_THROW(c.check(), CampaignError);
}

TEST(CampaignConfig, EchoOmitsRunPlumbing) {
  CampaignConfig a, b;
  b.workers = 7;
  b.out = "elsewhere";
  b.resume = true;
  EXPECT_EQ(config_echo(a), config_echo(b));
}

TEST(Campaign, NominalOnlyRunIsOneBenignRecord) {
  CampaignConfig c;
  c.faults = std::vector<std::string>{};
  const CampaignResult r = run_campaign(c);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].id, kNominalId);
  EXPECT_EQ(r.records[0].cls, FaultClass::Benign);
  EXPECT_FALSE(r.records[0].failure.has_value());
  EXPECT_EQ(r.ntft_count, 45u);
  EXPECT_NEAR(*r.coverage.overall_pct, 100.0, 1e-12);
}

TEST(Campaign, FilteredRunIsCompleteAndSorted) {
  const CampaignConfig c = small_config();
  const CampaignResult r = run_campaign(c);
  ASSERT_EQ(r.records.size(), c.faults->size());
  for (size_t i = 1; i < r.records.size(); ++i) EXPECT_LT(r.records[i - 1].id, r.records[i].id);
  EXPECT_EQ(r.coverage.counts.total(), r.records.size());
  EXPECT_EQ(r.nominal.cls, FaultClass::Benign);
}

TEST(Campaign, UnknownFilterIdIsAnError) {
  CampaignConfig c;
  c.faults = std::vector<std::string>{"COM9_M0_OC_G"};
  EXPECT_THROW(run_campaign(c), CampaignError);
  c.faults = std::vector<std::string>{"COM0_M0_OC_G"};
  c.scope = "COM1";
  EXPECT_THROW(run_campaign(c), CampaignError);
}

// Property: output bytes do not depend on the worker count.
TEST(Campaign, WorkerCountInvariance) {
  CampaignConfig c = small_config();
  c.out = scratch_dir("w1").string();
  run_campaign(c);
  c.workers = 3;
  c.out = scratch_dir("w3").string();
  run_campaign(c);
  for (const char* f : {"result.json", "records.csv", "heatmap.svg"})
    EXPECT_EQ(slurp(scratch_dir("w1").parent_path() / "w1" / f),
              slurp(scratch_dir("w3").parent_path() / "w3" / f))
        << f;
}

TEST(Campaign, ResumeMatchesFreshRun) {
  CampaignConfig c = small_config();
  const fs::path fresh = scratch_dir("fresh");
  c.out = fresh.string();
  run_campaign(c);

  // interrupted run: header plus the first five records, last line torn
  const fs::path part = scratch_dir("part");
  c.out = part.string();
  run_campaign(c);
  std::ifstream in(part / "progress.jsonl");
  std::string kept, line;
  for (int i = 0; i < 6 && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  kept += "{\"id\": \"COM";
  fs::remove(part / "result.json");
  { std::ofstream(part / "progress.jsonl", std::ios::trunc) << kept; }

  c.resume = true;
  size_t simulated = 0;
  const CampaignResult r = run_campaign(c, [&](size_t, size_t, const std::string&) { ++simulated; });
  EXPECT_EQ(simulated, c.faults->size() + 1);
  EXPECT_EQ(slurp(part / "result.json"), slurp(fresh / "result.json"));
  EXPECT_EQ(r.records.size(), c.faults->size());
}

TEST(Campaign, ResumeRefusesDifferentConfig) {
  CampaignConfig c = small_config();
  c.out = scratch_dir("run").string();
  run_campaign(c);
  c.resume = true;
  c.seed = 2;
  EXPECT_THROW(run_campaign(c), CampaignError);
}

TEST(Campaign, SolverFailuresAreFlaggedCatastrophic) {
  CampaignConfig c = small_config();
  c.solver.max_newton_iters = 1;
  c.solver.gmin_steps = 0;
  c.solver.source_steps = 0;
  const CampaignResult r = run_campaign(c);
  ASSERT_EQ(r.records.size(), c.faults->size());
  ASSERT_FALSE(r.failures.empty());
  for (const auto& [id, err] : r.failures) {
    const auto it = std::find_if(r.records.begin(), r.records.end(),
                                 [&](const CampaignRecord& x) { return x.id == id; });
    ASSERT_NE(it, r.records.end());
    EXPECT_EQ(it->cls, FaultClass::Catastrophic);
    EXPECT_TRUE(it->failure.has_value());
    EXPECT_FALSE(err.empty());
  }
}

TEST(Campaign, ResultJsonRoundTrip) {
  CampaignConfig c = small_config();
  c.out = scratch_dir("rt").string();
  const CampaignResult r = run_campaign(c);
  const CampaignResult back = read_result(c.out);
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  EXPECT_EQ(back.records, r.records);
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "timing.json"));
  EXPECT_EQ(slurp(fs::path(c.out) / "result.json").find("wall"), std::string::npos);
}

TEST(Campaign, MultiFromFaultSetFile) {
  const FlatCircuit circuit = flatten(build_baseline().netlist);
  const std::vector<FaultSet> sets = {
      {FaultPolicy::CatPair,
       {parse_fault_id(circuit, "COM0_M0_OC_G"), parse_fault_id(circuit, "COM0_M1_OC_G")}},
      {FaultPolicy::CatMarginal,
       {parse_fault_id(circuit, "COM3_M5_OC_D"), parse_fault_id(circuit, "COM3_M6_OC_D")}}};
  const fs::path file = scratch_dir("sets.json");
  fs::create_directories(file.parent_path());
  { std::ofstream(file) << fault_sets_to_json(sets).dump(); }
  CampaignConfig c;
  c.mode = CampaignMode::Multi;
  c.fault_sets = file.string();
  const CampaignResult r = run_campaign(c);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].set.faults.size(), 2u);
  EXPECT_EQ(r.coverage.per_component_counts.at("COM3").total(), 1u);
  EXPECT_THROW(render_heatmap(r), CampaignError);
}

TEST(Compare, IdenticalResultsGiveZeroDeltas) {
  const CampaignResult r = run_campaign(small_config());
  const ComparisonReport rep = compare(r, r);
  EXPECT_EQ(rep.common_ids, r.records.size());
  EXPECT_TRUE(rep.transitions.empty());
  ASSERT_FALSE(rep.coverage.empty());
  EXPECT_EQ(rep.coverage.front().component, "ALL");
  for (const auto& d : rep.coverage)
    if (d.delta()) EXPECT_EQ(*d.delta(), 0.0) << d.component;
  EXPECT_EQ(rep.area_overhead_pct(), 0.0);
  EXPECT_EQ(*rep.power_overhead_pct(), 0.0);
}

TEST(Compare, ListsClassTransitions) {
  const FlatCircuit circuit = flatten(build_baseline().netlist);
  const auto u = enumerate_faults(circuit);
  CampaignResult a, b;
  a.design = "a";
  b.design = "b";
  a.records = {synthetic_record(u[0], FaultClass::Catastrophic),
               synthetic_record(u[1], FaultClass::Marginal)};
  b.records = {synthetic_record(u[0], FaultClass::Marginal),
               synthetic_record(u[1], FaultClass::Marginal)};
  const ComparisonReport rep = compare(a, b);
  ASSERT_EQ(rep.transitions.size(), 1u);
  EXPECT_EQ(rep.transitions[0].id, u[0].id);
  EXPECT_EQ(rep.transitions[0].from, FaultClass::Catastrophic);
  EXPECT_EQ(rep.transitions[0].to, FaultClass::Marginal);
  EXPECT_NE(format_comparison(rep).find("CATASTROPHIC -> MARGINAL"), std::string::npos);
}

TEST(Compare, ModeMismatchIsAnError) {
  CampaignResult a, b;
  b.mode = CampaignMode::Multi;
  EXPECT_THROW(compare(a, b), CampaignError);
}

namespace {

size_t count_of(const std::string& s, const std::string& what) {
  size_t n = 0;
  for (size_t p = s.find(what); p != std::string::npos; p = s.find(what, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Heatmap, FullBaselineGrid) {
  const FlatCircuit circuit = flatten(build_baseline().netlist);
  CampaignResult r;
  r.design = "baseline";
  size_t i = 0;
  for (const auto& f : enumerate_faults(circuit))
    r.records.push_back(synthetic_record(f, static_cast<FaultClass>(i++ % 3)));
  const std::string svg = render_heatmap(r);
  EXPECT_EQ(count_of(svg, "<rect"), 270u);
  EXPECT_EQ(count_of(svg, "fill=\"#d73027\""), 90u);  // red: catastrophic
  EXPECT_EQ(count_of(svg, "fill=\"#fee08b\""), 90u);  // yellow: marginal
  EXPECT_EQ(count_of(svg, "fill=\"#1a9850\""), 90u);  // green: benign
  EXPECT_NE(svg.find("<title>COM0_M0_OC_G max_dnl="), std::string::npos);
  EXPECT_EQ(render_heatmap(r), svg);
}

TEST(Heatmap, AllBenignIsAllGreen) {
  const FlatCircuit circuit = flatten(build_baseline().netlist);
  CampaignResult r;
  for (const auto& f : enumerate_faults(circuit, std::string("COM1")))
    r.records.push_back(synthetic_record(f, FaultClass::Benign));
  const std::string svg = render_heatmap(r);
  EXPECT_EQ(count_of(svg, "<rect"), 36u);
  EXPECT_EQ(count_of(svg, "fill=\"#1a9850\""), 36u);
}
