#pragma once

// Fault campaigns: build a universe, inject and simulate every fault set on a
// worker pool, classify, aggregate, and write the run artifacts. Results are
// sorted by fault-set id, so the output does not depend on completion order.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "adcfaultlab/conversion.hpp"
#include "adcfaultlab/designs.hpp"
#include "adcfaultlab/faults.hpp"
#include "adcfaultlab/metrics.hpp"
#include "adcfaultlab/netlist.hpp"
#include "adcfaultlab/solver.hpp"
#include "json.hpp"

namespace adcfaultlab {

class CampaignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CampaignMode { Single, Multi };

inline const char* to_string(CampaignMode m) { return m == CampaignMode::Single ? "SINGLE" : "MULTI"; }

inline std::optional<CampaignMode> parse_campaign_mode(std::string_view s) {
  const std::string u = to_upper(s);
  if (u == "SINGLE") return CampaignMode::Single;
  if (u == "MULTI") return CampaignMode::Multi;
  return std::nullopt;
}

inline constexpr const char* kNominalId = "NOMINAL";

struct CampaignConfig {
  std::string design = "baseline";  // variant name or netlist path
  CampaignMode mode = CampaignMode::Single;
  SolverOptions solver;             // dt/tstop are derived from `conversion`
  FaultResistances resistances;
  MultiFaultCaps caps;
  uint64_t seed = 1;
  int workers = 1;
  std::string out;                  // empty: nothing is written
  bool dump_waveforms = false;
  bool resume = false;
  std::optional<std::string> scope;                // component label
  std::optional<std::vector<std::string>> faults;  // SINGLE id filter; empty list = nominal only
  std::optional<std::string> single_results;       // SINGLE result.json feeding MULTI composition
  std::optional<std::string> fault_sets;           // explicit MULTI fault-set list (JSON)
  ConversionSetup conversion;

  void check() const {
    if (workers < 1) throw CampaignError("worker count must be >= 1");
    if (design.empty()) throw CampaignError("design must not be empty");
    if (mode == CampaignMode::Single && (single_results || fault_sets))
      throw CampaignError("single_results/fault_sets apply to MULTI mode only");
    if (mode == CampaignMode::Multi && faults)
      throw CampaignError("the fault id filter applies to SINGLE mode only");
    if (single_results && fault_sets)
      throw CampaignError("give either single_results or fault_sets, not both");
    if (!(resistances.r_open > 0.0) || !(resistances.r_short > 0.0))
      throw CampaignError("fault resistances must be > 0");
    if (caps.marginal_group < 2) throw CampaignError("marginal_group must be >= 2");
    try {
      solver.check_dc();
      conversion.check();
    } catch (const std::invalid_argument& e) {
      throw CampaignError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

inline nlohmann::json cap_json(size_t v) {
  return v == MultiFaultCaps::kUnlimited ? nlohmann::json(nullptr) : nlohmann::json(v);
}

inline size_t cap_from_json(const nlohmann::json& j) {
  return j.is_null() ? MultiFaultCaps::kUnlimited : j.get<size_t>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  if (!j.is_object()) throw CampaignError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; }))
      throw CampaignError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

/// Everything that determines the records. Worker count, output directory
/// and resume flag are left out so that they cannot change result bytes.
inline nlohmann::json config_echo(const CampaignConfig& c) {
  const auto& s = c.solver;
  const auto& m = s.model;
  nlohmann::json j = {
      {"design", c.design},
      {"mode", to_string(c.mode)},
      {"solver",
       {{"abstol", s.abstol},
        {"reltol", s.reltol},
        {"max_newton_iters", s.max_newton_iters},
        {"gmin_steps", s.gmin_steps},
        {"source_steps", s.source_steps}}},
      {"model", {{"vth", m.vth}, {"kp", m.kp}, {"lambda", m.lambda}, {"gmin", m.gmin}}},
      {"resistances", {{"r_open", c.resistances.r_open}, {"r_short", c.resistances.r_short}}},
      {"caps",
       {{"cat_pair", detail::cap_json(c.caps.cat_pair)},
        {"cat_marginal", detail::cap_json(c.caps.cat_marginal)},
        {"multi_marginal", detail::cap_json(c.caps.multi_marginal)},
        {"marginal_group", c.caps.marginal_group}}},
      {"seed", c.seed},
      {"dump_waveforms", c.dump_waveforms},
      {"scope", detail::opt_json(c.scope)},
      {"faults", c.faults ? nlohmann::json(*c.faults) : nlohmann::json(nullptr)},
      {"single_results", detail::opt_json(c.single_results)},
      {"fault_sets", detail::opt_json(c.fault_sets)},
      {"conversion",
       {{"steps_per_code", c.conversion.steps_per_code},
        {"samples_per_step", c.conversion.samples_per_step},
        {"hold", c.conversion.hold},
        {"settle_fraction", c.conversion.settle_fraction},
        {"threshold", detail::opt_json(c.conversion.threshold)}}},
  };
  return j;
}

/// Reads a config document. Missing keys keep their defaults; unknown keys
/// are an error.
inline CampaignConfig config_from_json(const nlohmann::json& j, CampaignConfig c = {}) {
  using detail::reject_unknown;
  try {
    reject_unknown(j,
                   {"design", "mode", "solver", "model", "resistances", "caps", "seed", "workers",
                    "out", "dump_waveforms", "resume", "scope", "faults", "single_results",
                    "fault_sets", "conversion"},
                   "config");
    if (j.contains("design")) c.design = j["design"].get<std::string>();
    if (j.contains("mode")) {
      const auto m = parse_campaign_mode(j["mode"].get<std::string>());
      if (!m) throw CampaignError("mode must be SINGLE or MULTI");
      c.mode = *m;
    }
    if (j.contains("solver")) {
      const auto& s = j["solver"];
      reject_unknown(s, {"abstol", "reltol", "max_newton_iters", "gmin_steps", "source_steps"},
                     "solver");
      c.solver.abstol = s.value("abstol", c.solver.abstol);
      c.solver.reltol = s.value("reltol", c.solver.reltol);
      c.solver.max_newton_iters = s.value("max_newton_iters", c.solver.max_newton_iters);
      c.solver.gmin_steps = s.value("gmin_steps", c.solver.gmin_steps);
      c.solver.source_steps = s.value("source_steps", c.solver.source_steps);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      reject_unknown(m, {"vth", "kp", "lambda", "gmin"}, "model");
      auto& p = c.solver.model;
      p.vth = m.value("vth", p.vth);
      p.kp = m.value("kp", p.kp);
      p.lambda = m.value("lambda", p.lambda);
      p.gmin = m.value("gmin", p.gmin);
    }
    if (j.contains("resistances")) {
      const auto& r = j["resistances"];
      reject_unknown(r, {"r_open", "r_short"}, "resistances");
      c.resistances.r_open = r.value("r_open", c.resistances.r_open);
      c.resistances.r_short = r.value("r_short", c.resistances.r_short);
    }
    if (j.contains("caps")) {
      const auto& k = j["caps"];
      reject_unknown(k, {"cat_pair", "cat_marginal", "multi_marginal", "marginal_group"}, "caps");
      if (k.contains("cat_pair")) c.caps.cat_pair = detail::cap_from_json(k["cat_pair"]);
      if (k.contains("cat_marginal")) c.caps.cat_marginal = detail::cap_from_json(k["cat_marginal"]);
      if (k.contains("multi_marginal"))
        c.caps.multi_marginal = detail::cap_from_json(k["multi_marginal"]);
      c.caps.marginal_group = k.value("marginal_group", c.caps.marginal_group);
    }
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("dump_waveforms")) c.dump_waveforms = j["dump_waveforms"].get<bool>();
    if (j.contains("resume")) c.resume = j["resume"].get<bool>();
    auto opt_str = [&](const char* key, std::optional<std::string>& dst) {
      if (!j.contains(key)) return;
      dst = j[key].is_null() ? std::nullopt : std::optional(j[key].get<std::string>());
    };
    opt_str("scope", c.scope);
    opt_str("single_results", c.single_results);
    opt_str("fault_sets", c.fault_sets);
    if (j.contains("faults")) {
      c.faults = j["faults"].is_null() ? std::nullopt
                                       : std::optional(j["faults"].get<std::vector<std::string>>());
    }
    if (j.contains("conversion")) {
      const auto& v = j["conversion"];
      reject_unknown(v, {"steps_per_code", "samples_per_step", "hold", "settle_fraction", "threshold"},
                     "conversion");
      auto& s = c.conversion;
      s.steps_per_code = v.value("steps_per_code", s.steps_per_code);
      s.samples_per_step = v.value("samples_per_step", s.samples_per_step);
      s.hold = v.value("hold", s.hold);
      s.settle_fraction = v.value("settle_fraction", s.settle_fraction);
      if (v.contains("threshold"))
        s.threshold = v["threshold"].is_null() ? std::nullopt : std::optional(v["threshold"].get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CampaignError(std::string("bad config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Design loading

struct LoadedDesign {
  std::string label;
  std::string description;
  FlatCircuit circuit;
};

inline LoadedDesign load_design(const std::string& design) {
  if (auto v = parse_variant(design)) {
    DesignVariant d = build_design(*v);
    return {to_string(*v), d.description, flatten(d.netlist)};
  }
  std::ifstream in(design);
  if (!in) throw CampaignError("cannot load design '" + design + "': not a variant or readable file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    Netlist nl = parse_netlist(ss.str());
    const auto diags = validate(nl);
    for (const auto& d : diags)
      if (d.severity == Severity::Error)
        throw CampaignError("design '" + design + "' is invalid: " + d.message);
    return {design, nl.title, flatten(nl)};
  } catch (const NetlistError& e) {
    throw CampaignError("cannot load design '" + design + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Records and results

struct CampaignRecord {
  std::string id;  // fault-set id, or kNominalId
  FaultSet set;    // no members for the nominal record
  FaultClass cls = FaultClass::Catastrophic;
  DnlReport dnl;
  std::optional<double> power;        // W
  std::optional<std::string> failure;  // solver error text
  double wall_s = 0.0;                 // kept out of result.json

  bool operator==(const CampaignRecord& o) const {
    return id == o.id && set == o.set && cls == o.cls && dnl == o.dnl && power == o.power &&
           failure == o.failure;
  }

  /// Member components, deduplicated and joined with '+'.
  [[nodiscard]] std::string component() const {
    std::set<std::string> comps;
    for (const auto& f : set.faults) comps.insert(f.component);
    std::string out;
    for (const auto& c : comps) out += (out.empty() ? "" : "+") + c;
    return out;
  }
};

struct CampaignResult {
  nlohmann::json config;
  std::string design;
  std::string description;
  CampaignMode mode = CampaignMode::Single;
  std::string single_source;  // MULTI: where the classification came from
  size_t ntft_count = 0;
  double area_m2 = 0.0;
  CampaignRecord nominal;
  std::vector<CampaignRecord> records;
  CoverageSummary coverage;
  std::vector<std::pair<std::string, std::string>> failures;  // (id, error)
};

inline nlohmann::json to_json(const CampaignRecord& r, bool with_timing = false) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& f : r.set.faults) members.push_back(to_json(f));
  nlohmann::json j = {{"id", r.id},
                      {"policy", r.set.faults.empty() ? nlohmann::json(nullptr)
                                                      : nlohmann::json(to_string(r.set.policy))},
                      {"members", members},
                      {"class", to_string(r.cls)},
                      {"dnl", to_json(r.dnl)},
                      {"power_w", detail::opt_json(r.power)},
                      {"solver_failure", detail::opt_json(r.failure)}};
  if (with_timing) j["wall_s"] = r.wall_s;
  return j;
}

inline CampaignRecord record_from_json(const nlohmann::json& j) {
  CampaignRecord r;
  r.id = j.at("id").get<std::string>();
  for (const auto& m : j.at("members")) r.set.faults.push_back(fault_from_json(m));
  if (!j.at("policy").is_null()) {
    const auto p = parse_fault_policy(j["policy"].get<std::string>());
    if (!p) throw CampaignError("record '" + r.id + "' has an unknown policy");
    r.set.policy = *p;
  }
  const auto cls = parse_fault_class(j.at("class").get<std::string>());
  if (!cls) throw CampaignError("record '" + r.id + "' has an unknown class");
  r.cls = *cls;
  r.dnl = dnl_report_from_json(j.at("dnl"));
  r.power = detail::opt_double(j.at("power_w"));
  if (!j.at("solver_failure").is_null()) r.failure = j["solver_failure"].get<std::string>();
  r.wall_s = j.value("wall_s", 0.0);
  return r;
}

inline CoverageSummary coverage_from_json(const nlohmann::json& j) {
  auto counts = [](const nlohmann::json& c) {
    ClassCounts k;
    k.benign = c.at("BENIGN").get<size_t>();
    k.marginal = c.at("MARGINAL").get<size_t>();
    k.catastrophic = c.at("CATASTROPHIC").get<size_t>();
    return k;
  };
  CoverageSummary s;
  s.counts = counts(j.at("counts"));
  s.overall_pct = detail::opt_double(j.at("overall_pct"));
  for (const auto& [comp, v] : j.at("per_component").items()) {
    s.per_component_counts[comp] = counts(v.at("counts"));
    s.per_component[comp] = detail::opt_double(v.at("pct"));
  }
  return s;
}

inline nlohmann::json to_json(const CampaignResult& r) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& rec : r.records) records.push_back(to_json(rec));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [id, err] : r.failures) failures.push_back({{"id", id}, {"error", err}});
  return {{"config", r.config},
          {"design", r.design},
          {"description", r.description},
          {"mode", to_string(r.mode)},
          {"single_source", r.single_source},
          {"ntft_count", r.ntft_count},
          {"area_m2", r.area_m2},
          {"nominal", to_json(r.nominal)},
          {"record_count", r.records.size()},
          {"records", records},
          {"coverage", to_json(r.coverage)},
          {"failures", failures}};
}

inline CampaignResult result_from_json(const nlohmann::json& j) {
  try {
    CampaignResult r;
    r.config = j.at("config");
    r.design = j.at("design").get<std::string>();
    r.description = j.at("description").get<std::string>();
    const auto mode = parse_campaign_mode(j.at("mode").get<std::string>());
    if (!mode) throw CampaignError("result has an unknown mode");
    r.mode = *mode;
    r.single_source = j.at("single_source").get<std::string>();
    r.ntft_count = j.at("ntft_count").get<size_t>();
    r.area_m2 = j.at("area_m2").get<double>();
    r.nominal = record_from_json(j.at("nominal"));
    for (const auto& rec : j.at("records")) r.records.push_back(record_from_json(rec));
    r.coverage = coverage_from_json(j.at("coverage"));
    for (const auto& f : j.at("failures"))
      r.failures.emplace_back(f.at("id").get<std::string>(), f.at("error").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw CampaignError(std::string("malformed result document: ") + e.what());
  } catch (const FaultError& e) {
    throw CampaignError(std::string("malformed result document: ") + e.what());
  }
}

inline CampaignResult read_result(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "result.json" : path;
  std::ifstream in(file);
  if (!in) throw CampaignError("cannot read result '" + file.string() + "'");
  try {
    return result_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw CampaignError("cannot parse '" + file.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Simulation

namespace detail {

/// Runs `body(i)` for i in [0, n) on `workers` threads. The first exception
/// stops the queue and is rethrown after every thread has joined.
template <class F>
void parallel_for(size_t n, int workers, F&& body) {
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto loop = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  const size_t threads = std::min<size_t>(static_cast<size_t>(std::max(1, workers)), n);
  std::vector<std::thread> pool;
  for (size_t t = 1; t < threads; ++t) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline CampaignRecord simulate_record(const FlatCircuit& c, const std::optional<FaultSet>& fs,
                                      const CampaignConfig& cfg, const AdcInterface& adc,
                                      const std::filesystem::path& waves_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  CampaignRecord rec;
  rec.id = fs ? fs->id() : kNominalId;
  if (fs) rec.set = *fs;
  const FlatCircuit target = fs ? inject(c, *fs) : c;
  try {
    ConversionRun run = simulate_conversion(target, cfg.solver, cfg.conversion, adc);
    rec.cls = run.cls;
    rec.dnl = std::move(run.dnl);
    rec.power = run.power;
    if (!waves_dir.empty()) {
      std::ofstream os(waves_dir / (rec.id + ".csv"));
      write_waveform_csv(run.wave, os);
      if (!os) throw CampaignError("cannot write waveform for '" + rec.id + "'");
    }
  } catch (const SolverError& e) {
    rec.cls = FaultClass::Catastrophic;
    rec.failure = e.what();
    rec.dnl = compute_dnl(std::vector<std::optional<double>>((size_t{1} << adc.n_bits) - 1),
                          adc.vdd / (1 << adc.n_bits), std::set<int>{});
  }
  rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

inline std::vector<std::pair<FaultDescriptor, FaultClass>> classification_from(
    const CampaignResult& single, const FlatCircuit& c, const CampaignConfig& cfg) {
  if (single.mode != CampaignMode::Single)
    throw CampaignError("multi-fault composition needs a SINGLE-mode result");
  std::vector<std::pair<FaultDescriptor, FaultClass>> out;
  for (const auto& rec : single.records) {
    if (rec.set.faults.size() != 1) continue;
    FaultDescriptor f;
    try {
      f = parse_fault_id(c, rec.set.faults.front().id, cfg.resistances);
    } catch (const FaultError& e) {
      throw CampaignError(std::string("classification does not fit the design: ") + e.what());
    }
    if (cfg.scope && f.component != *cfg.scope) continue;
    out.emplace_back(std::move(f), rec.cls);
  }
  return out;
}

}  // namespace detail

/// Optional progress hook: (completed, total, record id).
using ProgressFn = std::function<void(size_t, size_t, const std::string&)>;

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw CampaignError("cannot write '" + p.string() + "'");
}

struct Progress {
  std::filesystem::path file;
  std::mutex mutex;
  std::ofstream os;
};

}  // namespace detail

inline CampaignResult run_campaign(const CampaignConfig& cfg, const ProgressFn& progress = {});
inline void write_outputs(const CampaignResult& r, const std::filesystem::path& dir);

/// Universe the config asks for. Empty SINGLE filter yields no sets.
inline std::vector<FaultSet> campaign_universe(const CampaignConfig& cfg, const FlatCircuit& c,
                                               std::string* single_source = nullptr,
                                               const ProgressFn& progress = {}) {
  std::vector<FaultSet> sets;
  if (cfg.mode == CampaignMode::Single) {
    std::vector<FaultDescriptor> faults;
    try {
      faults = enumerate_faults(c, cfg.scope, cfg.resistances);
      if (cfg.faults) {
        const std::set<std::string> wanted(cfg.faults->begin(), cfg.faults->end());
        for (const auto& id : wanted) parse_fault_id(c, id, cfg.resistances);
        std::erase_if(faults, [&](const FaultDescriptor& f) { return !wanted.count(f.id); });
        if (faults.size() != wanted.size())
          throw CampaignError("fault filter names faults outside the scoped universe");
      }
    } catch (const FaultError& e) {
      throw CampaignError(e.what());
    }
    for (auto& f : faults) sets.push_back(single_fault(std::move(f)));
    return sets;
  }

  if (cfg.fault_sets) {
    std::ifstream in(*cfg.fault_sets);
    if (!in) throw CampaignError("cannot read fault sets '" + *cfg.fault_sets + "'");
    try {
      for (const auto& s : fault_sets_from_json(nlohmann::json::parse(in))) {
        FaultSet fs{s.policy, {}};
        for (const auto& m : s.faults) fs.faults.push_back(parse_fault_id(c, m.id, cfg.resistances));
        sets.push_back(std::move(fs));
      }
    } catch (const nlohmann::json::exception& e) {
      throw CampaignError("bad fault-set file: " + std::string(e.what()));
    } catch (const FaultError& e) {
      throw CampaignError("fault sets do not fit the design: " + std::string(e.what()));
    }
    if (single_source) *single_source = "fault_sets:" + *cfg.fault_sets;
    return sets;
  }

  CampaignResult single;
  if (cfg.single_results) {
    single = read_result(*cfg.single_results);
    if (single_source) *single_source = *cfg.single_results;
  } else {
    CampaignConfig sc = cfg;
    sc.mode = CampaignMode::Single;
    sc.out.clear();
    sc.resume = false;
    sc.dump_waveforms = false;
    single = run_campaign(sc, progress);
    if (single_source) *single_source = "implicit";
  }
  return compose_multifault(detail::classification_from(single, c, cfg), cfg.caps, cfg.seed);
}

/// Runs every fault set of the configured universe exactly once (plus the
/// fault-free reference) and, when `cfg.out` is set, writes result.json,
/// records.csv, heatmap.svg (SINGLE), timing.json and optional waves/.
inline CampaignResult run_campaign(const CampaignConfig& cfg, const ProgressFn& progress) {
  cfg.check();
  namespace fs = std::filesystem;
  LoadedDesign design = load_design(cfg.design);
  const FlatCircuit& c = design.circuit;
  const AdcInterface adc;

  fs::path out_dir;
  fs::path waves_dir;
  if (!cfg.out.empty()) {
    out_dir = cfg.out;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
      throw CampaignError("output directory '" + cfg.out + "' is not writable");
    if (cfg.dump_waveforms) {
      waves_dir = out_dir / "waves";
      fs::create_directories(waves_dir, ec);
      if (ec) throw CampaignError("cannot create '" + waves_dir.string() + "'");
    }
  }

  CampaignResult result;
  result.config = config_echo(cfg);
  result.design = design.label;
  result.description = design.description;
  result.mode = cfg.mode;
  result.ntft_count = c.count(DeviceKind::Ntft);
  result.area_m2 = device_area_proxy(c);

  const std::vector<FaultSet> universe = campaign_universe(cfg, c, &result.single_source, progress);
  {
    std::set<std::string> ids;
    for (const auto& s : universe)
      if (!ids.insert(s.id()).second) throw CampaignError("duplicate fault set '" + s.id() + "'");
  }

  // resume: completed records are keyed by id in progress.jsonl, whose first
  // line holds the config echo they were produced under
  std::map<std::string, CampaignRecord> done;
  detail::Progress log;
  if (!out_dir.empty()) {
    log.file = out_dir / "progress.jsonl";
    if (cfg.resume && fs::exists(log.file)) {
      std::ifstream in(log.file);
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
          continue;  // torn final line from an interrupted run
        }
        if (header) {
          if (j.value("config", nlohmann::json()) != result.config)
            throw CampaignError("cannot resume: '" + cfg.out + "' was produced by a different config");
          header = false;
          continue;
        }
        CampaignRecord r = record_from_json(j);
        done[r.id] = std::move(r);
      }
      log.os.open(log.file, std::ios::app);
    } else {
      log.os.open(log.file, std::ios::trunc);
      log.os << nlohmann::json{{"config", result.config}}.dump() << '\n';
    }
    if (!log.os) throw CampaignError("output directory '" + cfg.out + "' is not writable");
  }

  std::vector<std::optional<FaultSet>> work;
  work.emplace_back(std::nullopt);  // nominal reference
  for (const auto& s : universe) work.emplace_back(s);

  std::vector<CampaignRecord> records(work.size());
  std::atomic<size_t> completed{0};
  detail::parallel_for(work.size(), cfg.workers, [&](size_t i) {
    const std::string id = work[i] ? work[i]->id() : kNominalId;
    if (auto it = done.find(id); it != done.end()) {
      records[i] = it->second;
    } else {
      records[i] = detail::simulate_record(c, work[i], cfg, adc, waves_dir);
      if (log.os.is_open()) {
        std::lock_guard lock(log.mutex);
        log.os << to_json(records[i], true).dump() << '\n';
        log.os.flush();
      }
    }
    const size_t n = completed.fetch_add(1) + 1;
    if (progress) progress(n, work.size(), id);
  });

  result.nominal = records.front();
  records.erase(records.begin());
  std::sort(records.begin(), records.end(),
            [](const CampaignRecord& a, const CampaignRecord& b) { return a.id < b.id; });
  // nominal-only run: the fault-free reference is the single record
  if (universe.empty()) records.push_back(result.nominal);
  result.records = std::move(records);

  std::vector<std::pair<FaultSet, FaultClass>> classified;
  for (const auto& r : result.records) {
    if (r.set.faults.empty()) continue;
    classified.emplace_back(r.set, r.cls);
    if (r.failure) result.failures.emplace_back(r.id, *r.failure);
  }
  result.coverage = coverage(classified, c.component_of());
  if (universe.empty()) {
    result.coverage.counts.add(result.nominal.cls);
    result.coverage.overall_pct = result.coverage.counts.pct();
  }

  if (!out_dir.empty()) write_outputs(result, out_dir);
  return result;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, const char* spec = "%.6g") {
  return v ? fmt(*v, spec) : std::string();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace detail

/// fault_id,component,class,max_dnl,rms_dnl,missing_codes,power_proxy
inline std::string records_csv(const CampaignResult& r) {
  std::string out = "fault_id,component,class,max_dnl,rms_dnl,missing_codes,power_proxy\n";
  for (const auto& rec : r.records) {
    std::string missing;
    for (int m : rec.dnl.missing_codes) missing += (missing.empty() ? "" : ";") + std::to_string(m);
    out += rec.id + "," + rec.component() + "," + to_string(rec.cls) + "," +
           detail::fmt_opt(rec.dnl.max_abs_dnl) + "," + detail::fmt_opt(rec.dnl.rms_dnl) + "," +
           missing + "," + detail::fmt_opt(rec.power) + "\n";
  }
  return out;
}

/// Device-by-site class grid for a SINGLE result. Rows are grouped by
/// component, columns are OC_G OC_D OC_S SC_GD SC_GS SC_DS.
inline std::string render_heatmap(const CampaignResult& r) {
  if (r.mode != CampaignMode::Single) throw CampaignError("heat maps need a SINGLE-mode result");
  static constexpr FaultSite kSites[] = {FaultSite::G,  FaultSite::D,  FaultSite::S,
                                         FaultSite::GD, FaultSite::GS, FaultSite::DS};
  struct Row {
    std::string label;
    std::map<FaultSite, const CampaignRecord*> cells;
  };
  std::map<std::pair<std::string, std::string>, Row> rows;  // (component, device path)
  for (const auto& rec : r.records) {
    if (rec.set.faults.size() != 1) continue;
    const auto& f = rec.set.faults.front();
    const std::string id = f.id;
    const auto cut = id.rfind('_', id.rfind('_') - 1);
    Row& row = rows[{f.component, f.device_path}];
    row.label = id.substr(0, cut);
    row.cells[f.site] = &rec;
  }

  constexpr int kLabelW = 170, kCellW = 56, kCellH = 16, kTop = 40, kLeft = 10;
  const int width = kLeft + kLabelW + 6 * kCellW + 10;
  const int height = kTop + static_cast<int>(rows.size()) * kCellH + 30;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\" font-family=\"monospace\" font-size=\"11\">\n";
  s += "<text x=\"" + std::to_string(kLeft) + "\" y=\"16\">" + detail::xml_escape(r.design) +
       " single-fault classes</text>\n";
  for (size_t k = 0; k < 6; ++k) {
    const std::string tag = std::string(is_open_site(kSites[k]) ? "OC_" : "SC_") + to_string(kSites[k]);
    s += "<text x=\"" + std::to_string(kLeft + kLabelW + static_cast<int>(k) * kCellW + 4) +
         "\" y=\"" + std::to_string(kTop - 6) + "\">" + tag + "</text>\n";
  }
  int y = kTop;
  for (const auto& [key, row] : rows) {
    s += "<text x=\"" + std::to_string(kLeft) + "\" y=\"" + std::to_string(y + 12) + "\">" +
         detail::xml_escape(row.label) + "</text>\n";
    for (size_t k = 0; k < 6; ++k) {
      auto it = row.cells.find(kSites[k]);
      std::string fill = "#cccccc";
      std::string tip = "not simulated";
      if (it != row.cells.end()) {
        const CampaignRecord& rec = *it->second;
        switch (rec.cls) {
          case FaultClass::Benign: fill = "#1a9850"; break;
          case FaultClass::Marginal: fill = "#fee08b"; break;
          case FaultClass::Catastrophic: fill = "#d73027"; break;
        }
        tip = rec.id + " max_dnl=" +
              (rec.dnl.max_abs_dnl ? detail::fmt(*rec.dnl.max_abs_dnl, "%.3f") : std::string("n/a"));
      }
      s += "<rect x=\"" + std::to_string(kLeft + kLabelW + static_cast<int>(k) * kCellW) +
           "\" y=\"" + std::to_string(y) + "\" width=\"" + std::to_string(kCellW - 2) +
           "\" height=\"" + std::to_string(kCellH - 2) + "\" fill=\"" + fill + "\"><title>" +
           detail::xml_escape(tip) + "</title></rect>\n";
    }
    y += kCellH;
  }
  s += "<text x=\"" + std::to_string(kLeft) + "\" y=\"" + std::to_string(y + 18) +
       "\">green: benign  yellow: marginal  red: catastrophic</text>\n";
  s += "</svg>\n";
  return s;
}

/// result.json, records.csv, timing.json and, for SINGLE results, heatmap.svg.
inline void write_outputs(const CampaignResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CampaignError("output directory '" + dir.string() + "' is not writable");
  detail::write_text(dir / "result.json", to_json(r).dump(2) + "\n");
  detail::write_text(dir / "records.csv", records_csv(r));
  nlohmann::json timing = nlohmann::json::object();
  timing[r.nominal.id] = r.nominal.wall_s;
  for (const auto& rec : r.records) timing[rec.id] = rec.wall_s;
  detail::write_text(dir / "timing.json", timing.dump(2) + "\n");
  if (r.mode == CampaignMode::Single) detail::write_text(dir / "heatmap.svg", render_heatmap(r));
}

// ---------------------------------------------------------------------------
// Comparison

struct CoverageDelta {
  std::string component;  // "ALL" for the overall figure
  std::optional<double> a_pct;
  std::optional<double> b_pct;
  [[nodiscard]] std::optional<double> delta() const {
    if (!a_pct || !b_pct) return std::nullopt;
    return *b_pct - *a_pct;
  }
};

struct ClassTransition {
  std::string id;
  FaultClass from = FaultClass::Catastrophic;
  FaultClass to = FaultClass::Catastrophic;
};

struct ComparisonReport {
  CampaignMode mode = CampaignMode::Single;
  std::string a_design;
  std::string b_design;
  std::vector<CoverageDelta> coverage;  // ALL first, then components
  double a_area_m2 = 0.0;
  double b_area_m2 = 0.0;
  std::optional<double> a_power_w;
  std::optional<double> b_power_w;
  size_t common_ids = 0;
  std::vector<ClassTransition> transitions;  // common ids whose class changed

  [[nodiscard]] double area_overhead_pct() const { return overhead_pct(b_area_m2, a_area_m2); }
  [[nodiscard]] std::optional<double> power_overhead_pct() const {
    if (!a_power_w || !b_power_w) return std::nullopt;
    return overhead_pct(*b_power_w, *a_power_w);
  }
};

/// `b` measured against reference `a`.
inline ComparisonReport compare(const CampaignResult& a, const CampaignResult& b) {
  if (a.mode != b.mode)
    throw CampaignError(std::string("cannot compare ") + to_string(a.mode) + " with " +
                        to_string(b.mode) + " results");
  ComparisonReport rep;
  rep.mode = a.mode;
  rep.a_design = a.design;
  rep.b_design = b.design;
  rep.coverage.push_back({"ALL", a.coverage.overall_pct, b.coverage.overall_pct});
  std::set<std::string> comps;
  for (const auto& [k, v] : a.coverage.per_component) comps.insert(k);
  for (const auto& [k, v] : b.coverage.per_component) comps.insert(k);
  for (const auto& k : comps) {
    auto pick = [&](const CoverageSummary& s) {
      auto it = s.per_component.find(k);
      return it == s.per_component.end() ? std::optional<double>() : it->second;
    };
    rep.coverage.push_back({k, pick(a.coverage), pick(b.coverage)});
  }
  rep.a_area_m2 = a.area_m2;
  rep.b_area_m2 = b.area_m2;
  rep.a_power_w = a.nominal.power;
  rep.b_power_w = b.nominal.power;

  std::map<std::string, FaultClass> in_a;
  for (const auto& r : a.records) in_a[r.id] = r.cls;
  for (const auto& r : b.records) {
    auto it = in_a.find(r.id);
    if (it == in_a.end()) continue;
    ++rep.common_ids;
    if (it->second != r.cls) rep.transitions.push_back({r.id, it->second, r.cls});
  }
  return rep;
}

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json cov = nlohmann::json::array();
  for (const auto& d : r.coverage)
    cov.push_back({{"component", d.component},
                   {"a_pct", detail::opt_json(d.a_pct)},
                   {"b_pct", detail::opt_json(d.b_pct)},
                   {"delta_pct", detail::opt_json(d.delta())}});
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& t : r.transitions)
    tr.push_back({{"id", t.id}, {"from", to_string(t.from)}, {"to", to_string(t.to)}});
  return {{"mode", to_string(r.mode)},
          {"a", r.a_design},
          {"b", r.b_design},
          {"coverage", cov},
          {"area_m2", {{"a", r.a_area_m2}, {"b", r.b_area_m2}}},
          {"area_overhead_pct", r.area_overhead_pct()},
          {"power_w", {{"a", detail::opt_json(r.a_power_w)}, {"b", detail::opt_json(r.b_power_w)}}},
          {"power_overhead_pct", detail::opt_json(r.power_overhead_pct())},
          {"common_ids", r.common_ids},
          {"transitions", tr}};
}

/// Coverage, area and power side by side, then the class transitions.
inline std::string format_comparison(const ComparisonReport& r) {
  std::ostringstream os;
  auto pct = [](const std::optional<double>& v) {
    return v ? detail::fmt(*v, "%6.1f%%") : std::string("     n/a");
  };
  os << to_string(r.mode) << " campaign: " << r.a_design << " -> " << r.b_design << "\n\n";
  os << "component        " << r.a_design << "     " << r.b_design << "     delta\n";
  for (const auto& d : r.coverage) {
    std::string name = d.component;
    name.resize(16, ' ');
    os << name << " " << pct(d.a_pct) << "  " << pct(d.b_pct) << "  "
       << (d.delta() ? detail::fmt(*d.delta(), "%+6.1f") : std::string("   n/a")) << "\n";
  }
  os << "\narea proxy (um^2) " << detail::fmt(r.a_area_m2 * 1e12, "%.2f") << " -> "
     << detail::fmt(r.b_area_m2 * 1e12, "%.2f") << " ("
     << detail::fmt(r.area_overhead_pct(), "%+.1f%%") << ")\n";
  os << "power proxy (nW)  " << (r.a_power_w ? detail::fmt(*r.a_power_w * 1e9, "%.1f") : "n/a")
     << " -> " << (r.b_power_w ? detail::fmt(*r.b_power_w * 1e9, "%.1f") : "n/a");
  if (auto p = r.power_overhead_pct()) os << " (" << detail::fmt(*p, "%+.1f%%") << ")";
  os << "\n\nclass transitions (" << r.transitions.size() << " of " << r.common_ids
     << " common ids)\n";
  for (const auto& t : r.transitions)
    os << "  " << t.id << ": " << to_string(t.from) << " -> " << to_string(t.to) << "\n";
  return os.str();
}

}  // namespace adcfaultlab
