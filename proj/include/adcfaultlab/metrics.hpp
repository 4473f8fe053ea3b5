#pragma once

// Waveform -> codes -> transitions -> DNL -> fault class, plus coverage and
// area/power proxies.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "adcfaultlab/faults.hpp"
#include "adcfaultlab/netlist.hpp"
#include "adcfaultlab/solver.hpp"
#include "json.hpp"

namespace adcfaultlab {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-sample codes; bit b is set iff the node voltage exceeds `threshold`.
/// `outputs` lists node paths most significant bit first.
inline std::vector<int> digitize(const Waveform& w, const std::vector<std::string>& outputs,
                                 double threshold) {
  std::vector<size_t> cols;
  for (const auto& name : outputs) {
    auto it = std::find(w.node_names.begin(), w.node_names.end(), name);
    if (it == w.node_names.end()) throw MetricsError("no node '" + name + "' in waveform");
    cols.push_back(static_cast<size_t>(it - w.node_names.begin()));
  }
  std::vector<int> codes(w.samples(), 0);
  for (size_t s = 0; s < w.samples(); ++s) {
    int code = 0;
    for (size_t c : cols) code = (code << 1) | (w.voltage(s, c) > threshold ? 1 : 0);
    codes[s] = code;
  }
  return codes;
}

/// Result of reading a staircase run one plateau at a time.
struct SteppedCodes {
  std::vector<double> vin;  // plateau input voltage
  /// Code held by every unmasked sample of the plateau; nullopt when the
  /// unmasked samples disagree.
  std::vector<std::optional<int>> code;
  std::vector<int> min_code;  // smallest unmasked code of the plateau
};

/// Groups per-sample codes by STAIR plateau and drops the first
/// `settle_fraction` of each plateau's samples (at least one sample stays).
inline SteppedCodes step_codes(const StimulusSpec& ramp, const std::vector<double>& times,
                               const std::vector<int>& codes, double settle_fraction) {
  if (ramp.kind != StimulusKind::Stair) throw MetricsError("transition extraction needs a STAIR ramp");
  if (!(ramp.v1 > ramp.v0)) throw MetricsError("ramp must be increasing");
  if (times.size() != codes.size()) throw MetricsError("codes not aligned with samples");
  if (!(settle_fraction >= 0.0 && settle_fraction < 1.0))
    throw MetricsError("settle fraction must lie in [0, 1)");

  std::vector<std::vector<int>> per(static_cast<size_t>(ramp.levels) + 1);
  for (size_t s = 0; s < times.size(); ++s)
    per[static_cast<size_t>(ramp.stair_level(times[s]))].push_back(codes[s]);

  SteppedCodes out;
  for (size_t k = 0; k < per.size(); ++k) {
    const auto& v = per[k];
    if (v.empty()) continue;
    const auto skip = std::min(v.size() - 1, static_cast<size_t>(settle_fraction * v.size()));
    const int first = v[skip];
    bool steady = true;
    int lo = first;
    for (size_t i = skip; i < v.size(); ++i) {
      steady = steady && v[i] == first;
      lo = std::min(lo, v[i]);
    }
    out.vin.push_back(stimulus_value(ramp, static_cast<double>(k) * ramp.hold));
    out.code.push_back(steady ? std::optional<int>(first) : std::nullopt);
    out.min_code.push_back(lo);
  }
  return out;
}

/// transition[k] = input of the first plateau whose unmasked codes are all
/// >= k + 1; nullopt if no plateau reaches k + 1.
inline std::vector<std::optional<double>> extract_transitions(const SteppedCodes& sc, int n_bits) {
  const int n = (1 << n_bits) - 1;
  std::vector<std::optional<double>> t(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k)
    for (size_t i = 0; i < sc.vin.size(); ++i)
      if (sc.min_code[i] >= k + 1) {
        t[static_cast<size_t>(k)] = sc.vin[i];
        break;
      }
  return t;
}

inline std::vector<std::optional<double>> extract_transitions(const StimulusSpec& ramp,
                                                              const std::vector<double>& times,
                                                              const std::vector<int>& codes,
                                                              int n_bits,
                                                              double settle_fraction = 0.25) {
  return extract_transitions(step_codes(ramp, times, codes, settle_fraction), n_bits);
}

struct DnlReport {
  int n_bits = 3;
  double v_lsb = 0.125;
  std::vector<std::optional<double>> transitions;  // 2^N - 1 boundaries
  std::vector<std::optional<double>> dnl;          // codes 1 .. 2^N - 2, in LSB
  std::optional<double> rms_dnl;
  std::optional<double> max_abs_dnl;
  std::vector<int> missing_codes;
  bool stuck = false;

  bool operator==(const DnlReport&) const = default;
};

/// dnl[k] describes code k + 1: (t[k+1] - t[k]) / v_lsb - 1. A code is
/// missing when a bounding transition is absent or its width is not positive.
/// `observed`, when given, adds codes never held on any plateau and decides
/// `stuck` (fewer than two distinct codes).
inline DnlReport compute_dnl(const std::vector<std::optional<double>>& transitions, double v_lsb,
                             const std::optional<std::set<int>>& observed = {}) {
  if (!(v_lsb > 0.0)) throw MetricsError("v_lsb must be > 0");
  const size_t nt = transitions.size();
  int bits = 0;
  while ((size_t{1} << bits) - 1 < nt) ++bits;
  if ((size_t{1} << bits) - 1 != nt || nt < 1)
    throw MetricsError("transition count must be 2^N - 1");

  DnlReport r;
  r.n_bits = bits;
  r.v_lsb = v_lsb;
  r.transitions = transitions;
  std::set<int> missing;
  double sumsq = 0.0;
  int defined = 0;
  for (size_t k = 0; k + 1 < nt; ++k) {
    const int code = static_cast<int>(k) + 1;
    if (!transitions[k] || !transitions[k + 1]) {
      r.dnl.push_back(std::nullopt);
      missing.insert(code);
      continue;
    }
    const double d = (*transitions[k + 1] - *transitions[k]) / v_lsb - 1.0;
    r.dnl.push_back(d);
    if (*transitions[k + 1] <= *transitions[k]) missing.insert(code);
    sumsq += d * d;
    ++defined;
    r.max_abs_dnl = std::max(r.max_abs_dnl.value_or(0.0), std::abs(d));
  }
  if (defined > 0) r.rms_dnl = std::sqrt(sumsq / defined);
  // the top code exists only if its single boundary does
  if (!transitions.back()) missing.insert(static_cast<int>(nt));

  const bool any = std::any_of(transitions.begin(), transitions.end(),
                               [](const auto& t) { return t.has_value(); });
  r.stuck = !any;
  if (observed) {
    for (int c = 0; c <= static_cast<int>(nt); ++c)
      if (!observed->count(c)) missing.insert(c);
    r.stuck = observed->size() < 2;
  }
  r.missing_codes.assign(missing.begin(), missing.end());
  return r;
}

/// Full DNL report for a stepped ramp run.
inline DnlReport analyze_ramp(const SteppedCodes& sc, int n_bits, double full_scale) {
  std::set<int> observed;
  for (const auto& c : sc.code)
    if (c) observed.insert(*c);
  return compute_dnl(extract_transitions(sc, n_bits), full_scale / (1 << n_bits), observed);
}

/// CATASTROPHIC: stuck, missing code, or max |DNL| >= 1. MARGINAL:
/// 0.5 < max |DNL| < 1. BENIGN: max |DNL| <= 0.5.
inline FaultClass classify(const DnlReport& r) {
  if (r.stuck || !r.missing_codes.empty()) return FaultClass::Catastrophic;
  const double m = r.max_abs_dnl.value_or(0.0);
  if (m >= 1.0) return FaultClass::Catastrophic;
  if (m > 0.5) return FaultClass::Marginal;
  return FaultClass::Benign;
}

inline FaultClass classify_max_dnl(double max_abs_dnl) {
  DnlReport r;
  r.max_abs_dnl = max_abs_dnl;
  return classify(r);
}

// ---------------------------------------------------------------------------
// Coverage

struct ClassCounts {
  size_t benign = 0;
  size_t marginal = 0;
  size_t catastrophic = 0;

  bool operator==(const ClassCounts&) const = default;

  [[nodiscard]] size_t total() const { return benign + marginal + catastrophic; }
  void add(FaultClass c) {
    switch (c) {
      case FaultClass::Benign: ++benign; break;
      case FaultClass::Marginal: ++marginal; break;
      case FaultClass::Catastrophic: ++catastrophic; break;
    }
  }
  /// 100 * (benign + marginal) / total; nullopt when empty.
  [[nodiscard]] std::optional<double> pct() const {
    if (total() == 0) return std::nullopt;
    return 100.0 * static_cast<double>(benign + marginal) / static_cast<double>(total());
  }
};

struct CoverageSummary {
  std::optional<double> overall_pct;
  std::map<std::string, std::optional<double>> per_component;
  ClassCounts counts;
  std::map<std::string, ClassCounts> per_component_counts;

  bool operator==(const CoverageSummary&) const = default;
};

/// Overall coverage over every set; per-component coverage over the sets
/// whose members all map to that component.
inline CoverageSummary coverage(const std::vector<std::pair<FaultSet, FaultClass>>& results,
                                const std::map<std::string, std::string>& component_of) {
  CoverageSummary s;
  for (const auto& [fs, cls] : results) {
    s.counts.add(cls);
    std::set<std::string> comps;
    for (const auto& f : fs.faults) {
      auto it = component_of.find(f.device_path);
      comps.insert(it != component_of.end() ? it->second : f.component);
    }
    if (comps.size() == 1) s.per_component_counts[*comps.begin()].add(cls);
  }
  s.overall_pct = s.counts.pct();
  for (const auto& [comp, counts] : s.per_component_counts) s.per_component[comp] = counts.pct();
  return s;
}

// ---------------------------------------------------------------------------
// Proxies

/// Mean of vdd * |i| over the samples of supply source `source`.
inline double estimate_power(const Waveform& w, size_t source, double vdd) {
  if (source >= w.source_names.size()) throw MetricsError("no such supply source record");
  if (w.samples() == 0) return 0.0;
  double sum = 0.0;
  for (size_t s = 0; s < w.samples(); ++s) sum += vdd * std::abs(w.current(s, source));
  return sum / static_cast<double>(w.samples());
}

inline double estimate_power(const Waveform& w, const std::string& source, double vdd) {
  auto it = std::find(w.source_names.begin(), w.source_names.end(), source);
  if (it == w.source_names.end()) throw MetricsError("no supply source '" + source + "'");
  return estimate_power(w, static_cast<size_t>(it - w.source_names.begin()), vdd);
}

/// Sum of W * L over NTFTs, in square meters.
inline double device_area_proxy(const FlatCircuit& c) {
  double a = 0.0;
  for (const auto& d : c.devices())
    if (d.kind == DeviceKind::Ntft) a += d.w * d.l;
  return a;
}

inline double overhead_pct(double value, double reference) {
  return reference != 0.0 ? 100.0 * (value - reference) / reference : 0.0;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> opt_double(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace detail

inline nlohmann::json to_json(const DnlReport& r) {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& v : r.transitions) t.push_back(detail::opt_json(v));
  nlohmann::json d = nlohmann::json::array();
  for (const auto& v : r.dnl) d.push_back(detail::opt_json(v));
  return {{"n_bits", r.n_bits},
          {"v_lsb", r.v_lsb},
          {"transitions", t},
          {"dnl", d},
          {"rms_dnl", detail::opt_json(r.rms_dnl)},
          {"max_abs_dnl", detail::opt_json(r.max_abs_dnl)},
          {"missing_codes", r.missing_codes},
          {"stuck", r.stuck}};
}

inline DnlReport dnl_report_from_json(const nlohmann::json& j) {
  DnlReport r;
  r.n_bits = j.at("n_bits").get<int>();
  r.v_lsb = j.at("v_lsb").get<double>();
  for (const auto& v : j.at("transitions")) r.transitions.push_back(detail::opt_double(v));
  for (const auto& v : j.at("dnl")) r.dnl.push_back(detail::opt_double(v));
  r.rms_dnl = detail::opt_double(j.at("rms_dnl"));
  r.max_abs_dnl = detail::opt_double(j.at("max_abs_dnl"));
  r.missing_codes = j.at("missing_codes").get<std::vector<int>>();
  r.stuck = j.at("stuck").get<bool>();
  return r;
}

inline nlohmann::json to_json(const ClassCounts& c) {
  return {{"BENIGN", c.benign}, {"MARGINAL", c.marginal}, {"CATASTROPHIC", c.catastrophic}};
}

inline nlohmann::json to_json(const CoverageSummary& s) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [comp, pct] : s.per_component)
    per[comp] = {{"pct", detail::opt_json(pct)}, {"counts", to_json(s.per_component_counts.at(comp))}};
  return {{"overall_pct", detail::opt_json(s.overall_pct)},
          {"counts", to_json(s.counts)},
          {"per_component", per}};
}

}  // namespace adcfaultlab
