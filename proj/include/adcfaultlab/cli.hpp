#pragma once

// Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adcfaultlab/campaign.hpp"
#include "adcfaultlab/conversion.hpp"
#include "adcfaultlab/designs.hpp"
#include "adcfaultlab/faults.hpp"
#include "adcfaultlab/metrics.hpp"
#include "adcfaultlab/netlist.hpp"
#include "json.hpp"

namespace adcfaultlab {

namespace detail {

inline MultiFaultCaps parse_caps(const std::string& text, MultiFaultCaps caps) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  if (parts.size() != 3) throw CLI::ValidationError("--caps", "expected three comma-separated caps");
  size_t* dst[] = {&caps.cat_pair, &caps.cat_marginal, &caps.multi_marginal};
  for (size_t i = 0; i < 3; ++i) {
    if (parts[i] == "all" || parts[i] == "inf") {
      *dst[i] = MultiFaultCaps::kUnlimited;
      continue;
    }
    size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(parts[i], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != parts[i].size() || parts[i].empty() || parts[i][0] == '-')
      throw CLI::ValidationError("--caps", "cap '" + parts[i] + "' is not a count or 'all'");
    *dst[i] = static_cast<size_t>(v);
  }
  return caps;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CampaignError("cannot read '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CampaignError("cannot parse '" + path + "': " + e.what());
  }
}

inline std::filesystem::path out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw CampaignError("output directory '" + out + "' is not writable");
  return out;
}

inline void print_coverage(std::ostream& os, const CampaignResult& r) {
  auto pct = [](const std::optional<double>& v) {
    return v ? detail::fmt(*v, "%.1f%%") : std::string("n/a");
  };
  os << r.design << " " << to_string(r.mode) << ": " << r.records.size() << " records, coverage "
     << pct(r.coverage.overall_pct) << " (B " << r.coverage.counts.benign << " / M "
     << r.coverage.counts.marginal << " / C " << r.coverage.counts.catastrophic << ")";
  if (!r.failures.empty()) os << ", " << r.failures.size() << " solver failures";
  os << "\n";
  for (const auto& [comp, counts] : r.coverage.per_component_counts) {
    std::string name = comp;
    name.resize(14, ' ');
    os << "  " << name << " " << pct(counts.pct()) << "  (B " << counts.benign << " / M "
       << counts.marginal << " / C " << counts.catastrophic << ")\n";
  }
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"adcfaultlab: analog fault injection for binary search ADCs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // enumerate
  std::string design = "baseline";
  std::optional<std::string> scope;
  std::string out_path;
  auto* enumerate = app.add_subcommand("enumerate", "List the single-fault universe of a design");
  enumerate->add_option("--design", design, "baseline, sfr, eclr or a netlist path");
  enumerate->add_option("--scope", scope, "Restrict to one component label (e.g. COM3)");
  enumerate->add_option("--out", out_path, "Also write universe.json here");

  // simulate
  std::vector<std::string> fault_ids;
  bool dump = false;
  auto* simulate = app.add_subcommand("simulate", "Run one ramp conversion, optionally with faults");
  simulate->add_option("--design", design, "baseline, sfr, eclr or a netlist path");
  simulate->add_option("--fault", fault_ids, "Fault id to inject (repeatable)");
  simulate->add_option("--out", out_path, "Write simulate.json (and wave.csv) here");
  simulate->add_flag("--dump-waveforms", dump, "Write the full waveform as CSV");

  // campaign
  std::string mode_text;
  int workers = 0;
  std::optional<uint64_t> seed;
  std::string caps_text;
  bool resume = false;
  std::string config_path;
  std::optional<std::string> single_results;
  std::optional<std::string> fault_sets;
  std::vector<std::string> filter;
  auto* campaign = app.add_subcommand("campaign", "Run a SINGLE or MULTI fault campaign");
  auto* design_opt = campaign->add_option("--design", design, "baseline, sfr, eclr or a netlist path");
  auto* mode_opt = campaign->add_option("--mode", mode_text, "single or multi")
                       ->check(CLI::IsMember({"single", "multi", "SINGLE", "MULTI"}));
  auto* workers_opt =
      campaign->add_option("--workers", workers, "Worker threads (default $ADCFAULTLAB_WORKERS or 1)")
          ->check(CLI::PositiveNumber);
  campaign->add_option("--seed", seed, "Multi-fault sampling seed");
  campaign->add_option("--caps", caps_text, "CAT_PAIR,CAT_MARGINAL,MULTI_MARGINAL caps ('all' = no cap)");
  auto* out_opt = campaign->add_option("--out", out_path, "Output directory");
  campaign->add_flag("--resume", resume, "Skip fault ids already completed in --out");
  auto* dump_opt = campaign->add_flag("--dump-waveforms", dump, "Write waves/<fault_id>.csv");
  campaign->add_option("--config", config_path, "JSON config file; flags override its fields")
      ->check(CLI::ExistingFile);
  auto* scope_opt = campaign->add_option("--scope", scope, "Restrict the universe to one component");
  campaign->add_option("--single-results", single_results,
                       "SINGLE result.json (or its directory) to compose MULTI sets from");
  campaign->add_option("--fault-sets", fault_sets, "Explicit MULTI fault-set list (JSON)");
  auto* filter_opt = campaign->add_option("--fault", filter, "Restrict SINGLE mode to these ids");
  campaign->add_flag("--nominal-only", "Simulate only the fault-free design");

  // compare
  std::string a_path;
  std::string b_path;
  auto* compare_cmd = app.add_subcommand("compare", "Compare two campaign results");
  compare_cmd->add_option("a", a_path, "Reference result directory or result.json")->required();
  compare_cmd->add_option("b", b_path, "Result directory or result.json to compare")->required();
  compare_cmd->add_option("--out", out_path, "Write comparison.json here");

  // report
  auto* report = app.add_subcommand("report", "Summarize a campaign result");
  report->add_option("result", a_path, "Result directory or result.json")->required();
  report->add_option("--out", out_path, "Rewrite records.csv (and heatmap.svg) here");

  // designs export
  auto* designs = app.add_subcommand("designs", "Bundled design utilities");
  designs->require_subcommand(1);
  auto* dexport = designs->add_subcommand("export", "Write the bundled designs as netlists");
  std::string export_dir = "designs";
  dexport->add_option("--out", export_dir, "Directory for <variant>.ckt files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*enumerate) {
      const LoadedDesign d = load_design(design);
      std::vector<FaultDescriptor> faults;
      try {
        faults = enumerate_faults(d.circuit, scope);
      } catch (const FaultError& e) {
        throw CampaignError(e.what());
      }
      for (const auto& f : faults) out << f.id << "\n";
      if (!out_path.empty())
        detail::write_text(detail::out_dir(out_path) / "universe.json",
                           universe_to_json(faults).dump(2) + "\n");
      err << faults.size() << " faults\n";
      return 0;
    }

    if (*simulate) {
      const LoadedDesign d = load_design(design);
      FlatCircuit c = d.circuit;
      FaultSet fs;  // policy tag is irrelevant for injection
      for (const auto& id : fault_ids) fs.faults.push_back(parse_fault_id(c, id));
      if (!fs.faults.empty()) c = inject(c, fs);
      const ConversionRun run = simulate_conversion(c, SolverOptions{}, ConversionSetup{});
      nlohmann::json j = {{"design", d.label},
                          {"faults", fault_ids},
                          {"class", to_string(run.cls)},
                          {"dnl", to_json(run.dnl)},
                          {"power_w", run.power}};
      out << j.dump(2) << "\n";
      if (!out_path.empty()) {
        const auto dir = detail::out_dir(out_path);
        detail::write_text(dir / "simulate.json", j.dump(2) + "\n");
        if (dump) {
          std::ofstream os(dir / "wave.csv");
          write_waveform_csv(run.wave, os);
        }
      }
      return 0;
    }

    if (*campaign) {
      CampaignConfig cfg;
      if (!config_path.empty()) cfg = config_from_json(detail::read_json_file(config_path));
      const bool config_sets_workers =
          !config_path.empty() && detail::read_json_file(config_path).contains("workers");
      if (design_opt->count() > 0) cfg.design = design;
      if (mode_opt->count() > 0) cfg.mode = *parse_campaign_mode(mode_text);
      if (workers_opt->count() > 0) {
        cfg.workers = workers;
      } else if (!config_sets_workers) {
        if (const char* env = std::getenv("ADCFAULTLAB_WORKERS")) {
          try {
            cfg.workers = std::stoi(env);
          } catch (const std::exception&) {
            err << "error: ADCFAULTLAB_WORKERS='" << env << "' is not a worker count\n";
            return 2;
          }
          if (cfg.workers < 1) {
            err << "error: ADCFAULTLAB_WORKERS must be >= 1\n";
            return 2;
          }
        }
      }
      if (seed) cfg.seed = *seed;
      if (!caps_text.empty()) {
        try {
          cfg.caps = detail::parse_caps(caps_text, cfg.caps);
        } catch (const CLI::ValidationError& e) {
          err << "error: " << e.what() << "\n";
          return 2;
        }
      }
      if (out_opt->count() > 0) cfg.out = out_path;
      if (resume) cfg.resume = true;
      if (dump_opt->count() > 0) cfg.dump_waveforms = dump;
      if (scope_opt->count() > 0) cfg.scope = scope;
      if (single_results) {
        cfg.single_results = std::filesystem::is_directory(*single_results)
                                 ? (std::filesystem::path(*single_results) / "result.json").string()
                                 : *single_results;
      }
      if (fault_sets) cfg.fault_sets = fault_sets;
      if (filter_opt->count() > 0) cfg.faults = filter;
      if (campaign->count("--nominal-only") > 0) cfg.faults = std::vector<std::string>{};
      if (cfg.out.empty()) {
        err << "error: campaign needs --out (or \"out\" in the config)\n";
        return 2;
      }

      size_t last_pct = 101;
      const CampaignResult r = run_campaign(cfg, [&](size_t done, size_t total, const std::string&) {
        const size_t pct = done * 100 / total;
        if (pct / 10 != last_pct / 10 || done == total) {
          last_pct = pct;
          err << "[" << done << "/" << total << "]\n";
        }
      });
      detail::print_coverage(out, r);
      return 0;
    }

    if (*compare_cmd) {
      const ComparisonReport rep = compare(read_result(a_path), read_result(b_path));
      out << format_comparison(rep);
      if (!out_path.empty())
        detail::write_text(detail::out_dir(out_path) / "comparison.json", to_json(rep).dump(2) + "\n");
      return 0;
    }

    if (*report) {
      const CampaignResult r = read_result(a_path);
      detail::print_coverage(out, r);
      if (r.nominal.power) out << "nominal power proxy " << detail::fmt(*r.nominal.power * 1e9, "%.1f") << " nW\n";
      out << "area proxy " << detail::fmt(r.area_m2 * 1e12, "%.2f") << " um^2, " << r.ntft_count
          << " NTFTs\n";
      if (!out_path.empty()) {
        const auto dir = detail::out_dir(out_path);
        detail::write_text(dir / "records.csv", records_csv(r));
        if (r.mode == CampaignMode::Single) detail::write_text(dir / "heatmap.svg", render_heatmap(r));
      }
      return 0;
    }

    if (*dexport) {
      const auto dir = detail::out_dir(export_dir);
      for (Variant v : {Variant::Baseline, Variant::Sfr, Variant::Eclr}) {
        const auto path = dir / (std::string(to_string(v)) + ".ckt");
        detail::write_text(path, serialize(build_design(v).netlist));
        out << path.string() << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace adcfaultlab
