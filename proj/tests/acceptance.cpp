// Acceptance suite: one test per criterion, summarized as one PASS/FAIL line
// each after the run. Campaign outputs land under --work-dir.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "adcfaultlab/campaign.hpp"

using namespace adcfaultlab;
namespace fs = std::filesystem;

namespace {

fs::path g_work_dir;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pct(const std::optional<double>& v) {
  char buf[32];
  if (!v) return "n/a";
  std::snprintf(buf, sizeof buf, "%.1f%%", *v);
  return buf;
}

int default_workers() {
  if (const char* env = std::getenv("ADCFAULTLAB_WORKERS")) return std::max(1, std::atoi(env));
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Campaign runs shared between criteria, computed on first use.
class Runs {
 public:
  static const CampaignResult& single(const std::string& design) {
    return get(design + "-single", [&] {
      CampaignConfig c;
      c.design = design;
      return c;
    });
  }

  // MULTI universe composed once from the baseline SINGLE classes, so every
  // variant faces the same fault sets.
  static const CampaignResult& multi(const std::string& design) {
    single("baseline");
    return get(design + "-multi", [&] {
      CampaignConfig c;
      c.design = design;
      c.mode = CampaignMode::Multi;
      c.caps = {200, 200, 200, 3};
      c.single_results = (g_work_dir / "baseline-single").string();
      return c;
    });
  }

  // Every baseline-derived multi-fault set inside one component.
  static const CampaignResult& scoped_multi(const std::string& design, const std::string& comp) {
    single("baseline");
    return get(design + "-multi-" + comp, [&] {
      CampaignConfig c;
      c.design = design;
      c.mode = CampaignMode::Multi;
      c.scope = comp;
      c.caps = MultiFaultCaps::unlimited();
      c.single_results = (g_work_dir / "baseline-single").string();
      return c;
    });
  }

 private:
  template <class Make>
  static const CampaignResult& get(const std::string& key, Make&& make) {
    static std::map<std::string, CampaignResult> cache;
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    CampaignConfig c = make();
    c.workers = default_workers();
    c.out = (g_work_dir / key).string();
    const auto t0 = std::chrono::steady_clock::now();
    CampaignResult r = run_campaign(c);
    std::printf("  [run] %-24s %4zu records  coverage %-6s  %zu solver failures  %.1f s\n",
                key.c_str(), r.records.size(), pct(r.coverage.overall_pct).c_str(),
                r.failures.size(), seconds_since(t0));
    std::fflush(stdout);
    return cache.emplace(key, std::move(r)).first->second;
  }
};

const char* const kVariants[] = {"baseline", "sfr", "eclr"};

}  // namespace

// ---------------------------------------------------------------------------

TEST(Acceptance, C01_SolverOracle) {
  const auto t0 = std::chrono::steady_clock::now();
  Netlist div;
  div.top_devices = {Device::vsource("v1", "a", "0", StimulusSpec::make_dc(1.0)),
                     Device::resistor("r1", "a", "b", 1e3), Device::resistor("r2", "b", "0", 3e3)};
  const FlatCircuit dc = flatten(div);
  const DcSolution s = dc_operating_point(dc, SolverOptions{});
  EXPECT_NEAR(s.voltages[static_cast<size_t>(dc.node("b"))], 0.75, 1e-12);

  const double r = 1e6, cap = 1e-9, tau = r * cap, dt = tau / 100;
  Netlist rc;
  rc.top_devices = {Device::vsource("v1", "in", "0", StimulusSpec::make_stair(0.0, 1.0, 1, dt)),
                    Device::resistor("r1", "in", "out", r), Device::capacitor("c1", "out", "0", cap)};
  SolverOptions o;
  o.dt = dt;
  o.tstop = 5 * tau + dt;
  const Waveform w = transient(flatten(rc), o);
  const auto v = w.node_trace("out");
  double worst = 0.0;
  for (size_t k = 0; k < w.samples(); ++k) {
    // The edge at t = dt is seen by backward Euler across (0, dt], so it acts at t = 0+.
    worst = std::max(worst, std::abs(v[k] - (1.0 - std::exp(-w.times[k] / tau))));
  }
  const double secs = seconds_since(t0);
  std::printf("  RC max error %.4f (limit 0.01), runtime %.3f s\n", worst, secs);
  EXPECT_LT(worst, 0.01);
  EXPECT_LT(secs, 1.0);
}

TEST(Acceptance, C02_DeviceGradients) {
  const TftModelParams p;
  constexpr double w = 2e-6, l = 600e-9, h = 1e-6;
  auto id = [&](double vgs, double vds) { return tft_eval(p, w, l, vgs, vds).id; };
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> vg(-0.5, 1.5), vd(-1.2, 1.2);
  int checked = 0;
  double worst = 0.0;
  while (checked < 100) {
    const double vgs = vg(rng), vds = vd(rng);
    const double edges[] = {vgs - p.vth, vgs - vds - p.vth, vds, vds - (vgs - p.vth),
                            -vds - (vgs - vds - p.vth)};
    if (std::any_of(std::begin(edges), std::end(edges), [](double e) { return std::abs(e) < 1e-5; }))
      continue;
    const auto op = tft_eval(p, w, l, vgs, vds);
    const double gm = (id(vgs + h, vds) - id(vgs - h, vds)) / (2 * h);
    const double gds = (id(vgs, vds + h) - id(vgs, vds - h)) / (2 * h);
    const double em = std::abs(op.gm - gm) / std::max(std::abs(gm), 1e-9);
    const double ed = std::abs(op.gds - gds) / std::max(std::abs(gds), 1e-9);
    worst = std::max({worst, em, ed});
    EXPECT_LE(em, 1e-4) << vgs << " " << vds;
    EXPECT_LE(ed, 1e-4) << vgs << " " << vds;
    ++checked;
  }
  double jump = 0.0;
  constexpr double e = 1e-12;
  for (double x : {0.1, 0.5, 1.0}) jump = std::max(jump, std::abs(id(p.vth - e, x) - id(p.vth + e, x)));
  for (double g : {0.5, 0.8, 1.2})
    jump = std::max(jump, std::abs(id(g, g - p.vth - e) - id(g, g - p.vth + e)));
  for (double g : {0.1, 0.6, 1.0}) jump = std::max(jump, std::abs(id(g, -e) - id(g, e)));
  std::printf("  worst relative gradient error %.2e, worst boundary jump %.2e A\n", worst, jump);
  EXPECT_LE(jump, 1e-12);
}

TEST(Acceptance, C03_IdealQuantizerDnl) {
  std::vector<std::optional<double>> t;
  for (int k = 1; k <= 7; ++k) t.push_back(k * 0.125);
  const DnlReport r = compute_dnl(t, 0.125);
  for (const auto& d : r.dnl) EXPECT_NEAR(*d, 0.0, 1e-12);
  ASSERT_TRUE(r.rms_dnl.has_value());
  EXPECT_NEAR(*r.rms_dnl, 0.0, 1e-12);
}

TEST(Acceptance, C04_DnlSumIdentity) {
  size_t checked = 0;
  double worst = 0.0;
  auto check = [&](const CampaignResult& res) {
    for (const auto& rec : res.records) {
      const auto& t = rec.dnl.transitions;
      if (t.empty() || !std::all_of(t.begin(), t.end(), [](const auto& x) { return x.has_value(); }))
        continue;
      double sum = 0.0;
      for (const auto& d : rec.dnl.dnl) sum += (*d + 1.0) * rec.dnl.v_lsb;
      const double err = std::abs(sum - (*t.back() - *t.front()));
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-9) << rec.id;
      ++checked;
    }
  };
  for (const char* v : kVariants) check(Runs::single(v));
  for (const char* v : kVariants) check(Runs::multi(v));
  std::printf("  %zu fully transitioning records, worst error %.2e V\n", checked, worst);
  EXPECT_GT(checked, 0u);
}

TEST(Acceptance, C05_ClassificationThresholds) {
  EXPECT_EQ(classify_max_dnl(0.3), FaultClass::Benign);
  EXPECT_EQ(classify_max_dnl(0.7), FaultClass::Marginal);
  EXPECT_EQ(classify_max_dnl(1.2), FaultClass::Catastrophic);
}

TEST(Acceptance, C06_FaultUniverse) {
  const FlatCircuit c = flatten(build_baseline().netlist);
  const auto u = enumerate_faults(c);
  std::printf("  baseline: %zu NTFTs, %zu single faults\n", c.count(DeviceKind::Ntft), u.size());
  EXPECT_EQ(c.count(DeviceKind::Ntft), 45u);
  EXPECT_EQ(u.size(), 270u);
  EXPECT_EQ(enumerate_faults(flatten(build_baseline().netlist)), u);
  for (size_t i = 6; i < u.size(); i += 6) EXPECT_LT(u[i - 6].device_path, u[i].device_path);
}

TEST(Acceptance, C07_InjectionStructure) {
  const FlatCircuit c = flatten(build_baseline().netlist);
  const FlatCircuit before = c;
  for (const auto& f : enumerate_faults(c)) {
    const FlatCircuit out = inject(c, single_fault(f));
    const bool open = f.kind == FaultKind::Open;
    EXPECT_EQ(out.node_count(), c.node_count() + (open ? 1u : 0u)) << f.id;
    EXPECT_EQ(out.devices().size(), c.devices().size() + 1) << f.id;
    EXPECT_EQ(out.count(DeviceKind::Resistor), c.count(DeviceKind::Resistor) + 1) << f.id;
    EXPECT_EQ(out.devices().back().kind, DeviceKind::Resistor);
    EXPECT_DOUBLE_EQ(out.devices().back().value, open ? 250e6 : 10.0) << f.id;
  }
  EXPECT_EQ(c, before);
}

TEST(Acceptance, C08_NominalConversion) {
  for (Variant v : {Variant::Baseline, Variant::Sfr, Variant::Eclr}) {
    const auto t0 = std::chrono::steady_clock::now();
    const ConversionRun run =
        simulate_conversion(flatten(build_design(v).netlist), SolverOptions{}, ConversionSetup{});
    const double secs = seconds_since(t0);
    std::printf("  %-8s max |DNL| %.4f LSB, %.2f s\n", to_string(v),
                run.dnl.max_abs_dnl.value_or(NAN), secs);
    EXPECT_LT(secs, 30.0);
    EXPECT_TRUE(run.dnl.missing_codes.empty()) << to_string(v);
    for (const auto& d : run.dnl.dnl) {
      ASSERT_TRUE(d.has_value());
      EXPECT_LT(std::abs(*d), 0.5) << to_string(v);
    }
    const double plateau = run.steps.vin[1] - run.steps.vin[0];
    std::set<int> seen;
    for (size_t i = 0; i < run.steps.vin.size(); ++i) {
      const auto& code = run.steps.code[i];
      ASSERT_TRUE(code.has_value()) << to_string(v) << " plateau " << i;
      if (i > 0) {
        EXPECT_GE(*code, *run.steps.code[i - 1]) << to_string(v) << " plateau " << i;
      }
      seen.insert(*code);
      const double vin = run.steps.vin[i];
      const int ideal = ideal_code(vin, 1.0, 3);
      const double to_edge = std::abs(vin - std::round(vin * 8) / 8);
      // Mismatches are allowed only on the plateaus either side of an ideal edge.
      if (*code != ideal) {
        EXPECT_LE(to_edge, 1.5 * plateau) << to_string(v) << " vin " << vin;
      }
    }
    EXPECT_EQ(seen.size(), 8u) << to_string(v);
  }
}

TEST(Acceptance, C09_HardeningDirection) {
  std::printf("  single-fault coverage (published 60 / 88.9 / 92):\n");
  for (const char* v : kVariants)
    std::printf("    %-8s %s\n", v, pct(Runs::single(v).coverage.overall_pct).c_str());
  const double s_b = *Runs::single("baseline").coverage.overall_pct;
  const double s_s = *Runs::single("sfr").coverage.overall_pct;
  const double s_e = *Runs::single("eclr").coverage.overall_pct;
  EXPECT_LT(s_b, s_s);
  EXPECT_LE(s_s, s_e);

  std::printf("  multi-fault coverage (published 34 / 73.2 / 77.3):\n");
  for (const char* v : kVariants)
    std::printf("    %-8s %s over %zu sets\n", v, pct(Runs::multi(v).coverage.overall_pct).c_str(),
                Runs::multi(v).records.size());
  const double m_b = *Runs::multi("baseline").coverage.overall_pct;
  const double m_s = *Runs::multi("sfr").coverage.overall_pct;
  const double m_e = *Runs::multi("eclr").coverage.overall_pct;
  EXPECT_LT(m_b, m_s);
  EXPECT_LE(m_s, m_e);

  std::printf("  per-component multi-fault coverage, baseline -> eclr (published 0%% -> 100%%):\n");
  for (const char* comp : {"COM3", "COM4"}) {
    const auto& b = Runs::scoped_multi("baseline", comp).coverage.per_component;
    const auto& e = Runs::scoped_multi("eclr", comp).coverage.per_component;
    ASSERT_TRUE(b.count(comp) && e.count(comp)) << comp;
    std::printf("    %s  %s -> %s\n", comp, pct(b.at(comp)).c_str(), pct(e.at(comp)).c_str());
    EXPECT_GT(*e.at(comp), *b.at(comp)) << comp;
  }
}

TEST(Acceptance, C10_OverheadDirection) {
  const auto& b = Runs::single("baseline");
  ASSERT_TRUE(b.nominal.power.has_value());
  std::printf("  overhead vs baseline (published ECLR: area +4.2%%, power +6%%):\n");
  for (const char* v : {"sfr", "eclr"}) {
    const auto& r = Runs::single(v);
    ASSERT_TRUE(r.nominal.power.has_value());
    std::printf("    %-5s area %.2f um^2 (%+.1f%%), power %.1f nW (%+.1f%%)\n", v, r.area_m2 * 1e12,
                overhead_pct(r.area_m2, b.area_m2), *r.nominal.power * 1e9,
                overhead_pct(*r.nominal.power, *b.nominal.power));
    EXPECT_GT(r.area_m2, b.area_m2) << v;
    EXPECT_GT(*r.nominal.power, *b.nominal.power) << v;
  }
}

TEST(Acceptance, C11_MultiFaultComposer) {
  const auto u = enumerate_faults(flatten(build_baseline().netlist));
  const std::vector<std::pair<FaultDescriptor, FaultClass>> in = {
      {u[0], FaultClass::Catastrophic},
      {u[6], FaultClass::Catastrophic},
      {u[12], FaultClass::Marginal},
      {u[18], FaultClass::Marginal}};
  const auto sets = compose_multifault(in, MultiFaultCaps::unlimited(), 1);
  std::map<FaultPolicy, size_t> n;
  for (const auto& s : sets) ++n[s.policy];
  EXPECT_EQ(n[FaultPolicy::CatPair], 1u);
  EXPECT_EQ(n[FaultPolicy::CatMarginal], 4u);
  EXPECT_EQ(n[FaultPolicy::MultiMarginal], 0u);
}

TEST(Acceptance, C12_FaultInteractionContainment) {
  std::vector<ClassTransition> contained;
  std::string listing;
  auto scan = [&](const CampaignResult& a, const CampaignResult& b) {
    const ComparisonReport rep = compare(a, b);
    const std::string text = format_comparison(rep);
    for (const auto& t : rep.transitions) {
      if (t.id.find('+') == std::string::npos || t.from != FaultClass::Catastrophic) continue;
      contained.push_back(t);
      EXPECT_NE(text.find(t.id + ": CATASTROPHIC -> "), std::string::npos) << t.id;
    }
  };
  scan(Runs::multi("baseline"), Runs::multi("eclr"));
  for (const char* comp : {"COM3", "COM4"})
    scan(Runs::scoped_multi("baseline", comp), Runs::scoped_multi("eclr", comp));
  std::printf("  %zu fault sets CATASTROPHIC on baseline but not on eclr, e.g.\n", contained.size());
  for (size_t i = 0; i < std::min<size_t>(5, contained.size()); ++i)
    std::printf("    %s -> %s\n", contained[i].id.c_str(), to_string(contained[i].to));
  EXPECT_FALSE(contained.empty());
}

TEST(Acceptance, C13_DeterminismParallelism) {
  CampaignConfig c;
  c.design = "baseline";
  double secs[2] = {};
  const int workers[2] = {1, 8};
  for (int i = 0; i < 2; ++i) {
    c.workers = workers[i];
    c.out = (g_work_dir / ("determinism-w" + std::to_string(workers[i]))).string();
    const auto t0 = std::chrono::steady_clock::now();
    run_campaign(c);
    secs[i] = seconds_since(t0);
  }
  const std::string a = slurp(g_work_dir / "determinism-w1" / "result.json");
  const std::string b = slurp(g_work_dir / "determinism-w8" / "result.json");
  std::printf("  1 worker %.1f s, 8 workers %.1f s on %u hardware threads, result.json %s\n",
              secs[0], secs[1], std::thread::hardware_concurrency(),
              a == b ? "identical" : "DIFFERS");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_LT(secs[1], 600.0);
}

TEST(Acceptance, C14_TransitionOracle) {
  const FlatCircuit c = flatten(build_baseline().netlist);
  const ConversionRun run = simulate_conversion(c, SolverOptions{}, ConversionSetup{});
  const auto oracle = bisect_transitions(c, SolverOptions{}, 1e-6);
  const double limit = run.dnl.v_lsb / 100;
  double worst = 0.0;
  for (size_t k = 0; k < oracle.size(); ++k) {
    ASSERT_TRUE(run.dnl.transitions[k].has_value());
    const double err = std::abs(*run.dnl.transitions[k] - oracle[k]);
    worst = std::max(worst, err);
    EXPECT_LE(err, limit) << "transition " << k;
  }
  std::printf("  worst ramp vs bisection gap %.5f V (limit %.5f V)\n", worst, limit);
}

// ---------------------------------------------------------------------------

namespace {

const std::map<std::string, std::string> kCriteria = {
    {"C01_SolverOracle", "solver oracle"},
    {"C02_DeviceGradients", "device-model gradients"},
    {"C03_IdealQuantizerDnl", "ideal-quantizer DNL"},
    {"C04_DnlSumIdentity", "DNL sum identity"},
    {"C05_ClassificationThresholds", "classification thresholds"},
    {"C06_FaultUniverse", "fault universe"},
    {"C07_InjectionStructure", "injection structure"},
    {"C08_NominalConversion", "nominal conversion"},
    {"C09_HardeningDirection", "hardening direction"},
    {"C10_OverheadDirection", "overhead direction"},
    {"C11_MultiFaultComposer", "multi-fault composer"},
    {"C12_FaultInteractionContainment", "fault-interaction containment"},
    {"C13_DeterminismParallelism", "determinism and parallelism"},
    {"C14_TransitionOracle", "transition-extraction oracle"},
};

class CriterionSummary : public ::testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const ::testing::TestInfo& info) override {
    results_[info.name()] = info.result()->Passed();
  }
  void OnTestProgramEnd(const ::testing::UnitTest&) override {
    std::printf("\nacceptance criteria\n");
    for (const auto& [name, label] : kCriteria) {
      auto it = results_.find(name);
      const char* verdict = it == results_.end() ? "SKIP" : it->second ? "PASS" : "FAIL";
      std::printf("%s  criterion %2d  %s\n", verdict, std::stoi(name.substr(1, 2)), label.c_str());
    }
    std::fflush(stdout);
  }

 private:
  std::map<std::string, bool> results_;
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  g_work_dir = fs::temp_directory_path() / "adcfaultlab_acceptance";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--work-dir") == 0 && i + 1 < argc) {
      g_work_dir = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [gtest flags] [--work-dir DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::remove_all(g_work_dir);
  fs::create_directories(g_work_dir);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionSummary);
  return RUN_ALL_TESTS();
}
