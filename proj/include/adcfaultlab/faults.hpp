#pragma once

// Per-terminal open/short defect universe, resistive injection, and
// multi-fault composition.
//
// Canonical fault id: <component>_<device>_<OC|SC>_<site>, for example
// COM1_M0_OC_G. <device> is the device path below its component, upper-cased
// (top-level devices keep their full name). Component labels contain no
// underscore, so the id splits unambiguously at the first and last two '_'.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adcfaultlab/netlist.hpp"
#include "json.hpp"

namespace adcfaultlab {

enum class FaultKind { Open, Short };

/// Opens: one terminal. Shorts: one unordered terminal pair.
enum class FaultSite { G, D, S, GD, GS, DS };

/// Impact class; the enumerator order is the severity order.
enum class FaultClass { Benign, Marginal, Catastrophic };

enum class FaultPolicy { Single, CatPair, CatMarginal, MultiMarginal };

inline const char* to_string(FaultKind k) { return k == FaultKind::Open ? "OPEN" : "SHORT"; }

inline const char* to_string(FaultSite s) {
  switch (s) {
    case FaultSite::G: return "G";
    case FaultSite::D: return "D";
    case FaultSite::S: return "S";
    case FaultSite::GD: return "GD";
    case FaultSite::GS: return "GS";
    case FaultSite::DS: return "DS";
  }
  return "?";
}

inline const char* to_string(FaultClass c) {
  switch (c) {
    case FaultClass::Benign: return "BENIGN";
    case FaultClass::Marginal: return "MARGINAL";
    case FaultClass::Catastrophic: return "CATASTROPHIC";
  }
  return "?";
}

inline const char* to_string(FaultPolicy p) {
  switch (p) {
    case FaultPolicy::Single: return "SINGLE";
    case FaultPolicy::CatPair: return "CAT_PAIR";
    case FaultPolicy::CatMarginal: return "CAT_MARGINAL";
    case FaultPolicy::MultiMarginal: return "MULTI_MARGINAL";
  }
  return "?";
}

inline std::optional<FaultKind> parse_fault_kind(std::string_view s) {
  if (s == "OPEN") return FaultKind::Open;
  if (s == "SHORT") return FaultKind::Short;
  return std::nullopt;
}

inline std::optional<FaultSite> parse_fault_site(std::string_view s) {
  for (FaultSite f : {FaultSite::G, FaultSite::D, FaultSite::S, FaultSite::GD, FaultSite::GS,
                      FaultSite::DS})
    if (s == to_string(f)) return f;
  return std::nullopt;
}

inline std::optional<FaultClass> parse_fault_class(std::string_view s) {
  for (FaultClass c : {FaultClass::Benign, FaultClass::Marginal, FaultClass::Catastrophic})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

inline std::optional<FaultPolicy> parse_fault_policy(std::string_view s) {
  for (FaultPolicy p : {FaultPolicy::Single, FaultPolicy::CatPair, FaultPolicy::CatMarginal,
                        FaultPolicy::MultiMarginal})
    if (s == to_string(p)) return p;
  return std::nullopt;
}

inline bool is_open_site(FaultSite s) {
  return s == FaultSite::G || s == FaultSite::D || s == FaultSite::S;
}

struct FaultResistances {
  double r_open = 250e6;  // ohms
  double r_short = 10.0;  // ohms

  bool operator==(const FaultResistances&) const = default;
};

class FaultError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FaultDescriptor {
  std::string id;
  std::string device_path;
  std::string component;
  FaultKind kind = FaultKind::Open;
  FaultSite site = FaultSite::G;
  double r_ohms = 250e6;

  bool operator==(const FaultDescriptor&) const = default;
};

struct FaultSet {
  FaultPolicy policy = FaultPolicy::Single;
  std::vector<FaultDescriptor> faults;

  bool operator==(const FaultSet&) const = default;

  /// Member ids joined with '+', in member order.
  [[nodiscard]] std::string id() const {
    std::string out;
    for (const auto& f : faults) {
      if (!out.empty()) out += '+';
      out += f.id;
    }
    return out;
  }
};

inline FaultSet single_fault(FaultDescriptor f) { return {FaultPolicy::Single, {std::move(f)}}; }

// ---------------------------------------------------------------------------
// Ids

namespace detail {

inline std::string local_device_name(const FlatDevice& d) {
  if (d.component == kTopComponent) return to_upper(d.path);
  const auto dot = d.path.find('.');
  return to_upper(dot == std::string::npos ? d.path : d.path.substr(dot + 1));
}

inline std::string device_key(const std::string& component, const std::string& local) {
  return component + "_" + local;
}

}  // namespace detail

inline std::string format_fault_id(const FlatDevice& d, FaultKind kind, FaultSite site) {
  return detail::device_key(d.component, detail::local_device_name(d)) +
         (kind == FaultKind::Open ? "_OC_" : "_SC_") + to_string(site);
}

/// Resolves a canonical id against `c`. Throws FaultError on malformed ids,
/// unknown devices, non-NTFT devices, or a kind/site mismatch.
inline FaultDescriptor parse_fault_id(const FlatCircuit& c, std::string_view id,
                                      const FaultResistances& r = {}) {
  const std::string s(id);
  const auto last = s.rfind('_');
  const auto mid = last == std::string::npos || last == 0 ? std::string::npos : s.rfind('_', last - 1);
  if (mid == std::string::npos) throw FaultError("malformed fault id '" + s + "'");
  const std::string key = s.substr(0, mid);
  const std::string kind_tag = s.substr(mid + 1, last - mid - 1);
  const auto site = parse_fault_site(s.substr(last + 1));
  if (!site || (kind_tag != "OC" && kind_tag != "SC"))
    throw FaultError("malformed fault id '" + s + "'");
  const FaultKind kind = kind_tag == "OC" ? FaultKind::Open : FaultKind::Short;
  if ((kind == FaultKind::Open) != is_open_site(*site))
    throw FaultError("fault id '" + s + "' pairs " + kind_tag + " with site " + to_string(*site));
  for (const auto& d : c.devices()) {
    if (d.kind != DeviceKind::Ntft) continue;
    if (detail::device_key(d.component, detail::local_device_name(d)) != key) continue;
    return {s, d.path, d.component, kind, *site, kind == FaultKind::Open ? r.r_open : r.r_short};
  }
  throw FaultError("fault id '" + s + "' names no NTFT in the circuit");
}

// ---------------------------------------------------------------------------
// Enumeration

/// Six faults per in-scope NTFT, ordered by device path, OPEN before SHORT,
/// sites G, D, S / GD, GS, DS. `scope` restricts to one component label.
inline std::vector<FaultDescriptor> enumerate_faults(const FlatCircuit& c,
                                                     const std::optional<std::string>& scope = {},
                                                     const FaultResistances& r = {}) {
  if (scope) {
    const bool known = std::any_of(c.devices().begin(), c.devices().end(),
                                   [&](const FlatDevice& d) { return d.component == *scope; });
    if (!known) throw FaultError("unknown component '" + *scope + "'");
  }
  std::vector<const FlatDevice*> tfts;
  for (const auto& d : c.devices())
    if (d.kind == DeviceKind::Ntft && (!scope || d.component == *scope)) tfts.push_back(&d);
  std::sort(tfts.begin(), tfts.end(),
            [](const FlatDevice* a, const FlatDevice* b) { return a->path < b->path; });

  std::vector<FaultDescriptor> out;
  out.reserve(tfts.size() * 6);
  for (const FlatDevice* d : tfts) {
    for (FaultSite s : {FaultSite::G, FaultSite::D, FaultSite::S})
      out.push_back({format_fault_id(*d, FaultKind::Open, s), d->path, d->component,
                     FaultKind::Open, s, r.r_open});
    for (FaultSite s : {FaultSite::GD, FaultSite::GS, FaultSite::DS})
      out.push_back({format_fault_id(*d, FaultKind::Short, s), d->path, d->component,
                     FaultKind::Short, s, r.r_short});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Injection

namespace detail {

// NTFT terminal order is drain, gate, source.
inline size_t terminal_index(char t) {
  switch (t) {
    case 'D': return 0;
    case 'G': return 1;
    default: return 2;
  }
}

}  // namespace detail

/// Returns a copy of `c` with every fault of `fs` applied. An open splits the
/// terminal onto a fresh node `<path>:<site>` joined to the original node by
/// r_open; a short adds r_short across the terminal pair.
inline FlatCircuit inject(const FlatCircuit& c, const FaultSet& fs) {
  if (fs.faults.empty()) throw FaultError("cannot inject an empty fault set");
  std::set<std::pair<std::string, FaultSite>> seen;
  for (const auto& f : fs.faults) {
    if (!seen.emplace(f.device_path, f.site).second)
      throw FaultError("fault set targets " + f.device_path + " site " + to_string(f.site) +
                       " twice");
    const FlatDevice* d = c.find_device(f.device_path);
    if (!d) throw FaultError("fault '" + f.id + "' references missing device '" + f.device_path + "'");
    if (d->kind != DeviceKind::Ntft)
      throw FaultError("fault '" + f.id + "' targets non-NTFT device '" + f.device_path + "'");
    if ((f.kind == FaultKind::Open) != is_open_site(f.site))
      throw FaultError("fault '" + f.id + "' has inconsistent kind and site");
    if (!(f.r_ohms > 0.0)) throw FaultError("fault '" + f.id + "' resistance must be > 0");
  }

  FlatCircuit out = c;
  for (const auto& f : fs.faults) {
    const size_t pos = out.device_position(f.device_path);
    const std::string site = to_lower(to_string(f.site));
    FlatDevice r;
    r.kind = DeviceKind::Resistor;
    r.value = f.r_ohms;
    r.component = out.devices()[pos].component;
    if (f.kind == FaultKind::Open) {
      const size_t t = detail::terminal_index(to_string(f.site)[0]);
      const int original = out.devices()[pos].nodes[t];
      const int split = out.add_node(f.device_path + ":" + site);
      out.device_at(pos).nodes[t] = split;
      r.path = f.device_path + ":oc_" + site;
      r.nodes = {split, original};
    } else {
      const std::string pair = to_string(f.site);
      const auto& nodes = out.devices()[pos].nodes;
      r.path = f.device_path + ":sc_" + site;
      r.nodes = {nodes[detail::terminal_index(pair[0])], nodes[detail::terminal_index(pair[1])]};
    }
    out.add_device(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-fault composition

struct MultiFaultCaps {
  static constexpr size_t kUnlimited = std::numeric_limits<size_t>::max();
  size_t cat_pair = 50;
  size_t cat_marginal = 50;
  size_t multi_marginal = 50;
  int marginal_group = 3;  // members per MULTI_MARGINAL set

  bool operator==(const MultiFaultCaps&) const = default;

  static MultiFaultCaps unlimited() {
    return {kUnlimited, kUnlimited, kUnlimited, 3};
  }
};

namespace detail {

// Exact binomial coefficient, saturating at SIZE_MAX.
inline size_t choose(size_t n, size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (size_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > std::numeric_limits<size_t>::max()) return std::numeric_limits<size_t>::max();
  }
  return static_cast<size_t>(r);
}

// Uniform draw in [0, n) by rejection; portable across standard libraries.
inline uint64_t draw_below(std::mt19937_64& rng, uint64_t n) {
  const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                         std::numeric_limits<uint64_t>::max() % n;
  uint64_t v = 0;
  do v = rng(); while (v >= limit);
  return v % n;
}

// Ascending sample of min(k, n) distinct ranks in [0, n) (Floyd's algorithm).
inline std::vector<size_t> sample_ranks(size_t n, size_t k, std::mt19937_64& rng) {
  std::vector<size_t> out;
  if (k >= n) {
    out.resize(n);
    for (size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  std::set<size_t> picked;
  for (size_t j = n - k; j < n; ++j) {
    const auto t = static_cast<size_t>(draw_below(rng, j + 1));
    if (!picked.insert(t).second) picked.insert(j);
  }
  return {picked.begin(), picked.end()};
}

// Rank -> k-combination of [0, n) in lexicographic order.
inline std::vector<size_t> unrank_combination(size_t n, size_t k, size_t rank) {
  std::vector<size_t> out;
  size_t next = 0;
  for (size_t slot = 0; slot < k; ++slot) {
    for (size_t v = next;; ++v) {
      const size_t block = choose(n - v - 1, k - slot - 1);
      if (rank < block) {
        out.push_back(v);
        next = v + 1;
        break;
      }
      rank -= block;
    }
  }
  return out;
}

}  // namespace detail

/// CAT_PAIR (pairs of catastrophic faults), CAT_MARGINAL (catastrophic x
/// marginal) and MULTI_MARGINAL (marginal groups), each sampled down to its
/// cap without replacement. Output order: family, then lexicographic rank.
inline std::vector<FaultSet> compose_multifault(
    const std::vector<std::pair<FaultDescriptor, FaultClass>>& classified,
    const MultiFaultCaps& caps, uint64_t seed) {
  std::vector<FaultDescriptor> cat;
  std::vector<FaultDescriptor> mar;
  for (const auto& [f, cls] : classified) {
    if (cls == FaultClass::Catastrophic) cat.push_back(f);
    if (cls == FaultClass::Marginal) mar.push_back(f);
  }
  auto by_id = [](const FaultDescriptor& a, const FaultDescriptor& b) { return a.id < b.id; };
  std::sort(cat.begin(), cat.end(), by_id);
  std::sort(mar.begin(), mar.end(), by_id);

  std::mt19937_64 rng(seed);
  std::vector<FaultSet> out;
  auto emit = [&](FaultPolicy policy, std::vector<FaultDescriptor> members) {
    std::set<std::pair<std::string, FaultSite>> sites;
    for (const auto& m : members)
      if (!sites.emplace(m.device_path, m.site).second) return;
    out.push_back({policy, std::move(members)});
  };

  for (size_t r : detail::sample_ranks(detail::choose(cat.size(), 2), caps.cat_pair, rng)) {
    const auto ix = detail::unrank_combination(cat.size(), 2, r);
    emit(FaultPolicy::CatPair, {cat[ix[0]], cat[ix[1]]});
  }
  for (size_t r : detail::sample_ranks(cat.size() * mar.size(), caps.cat_marginal, rng))
    emit(FaultPolicy::CatMarginal, {cat[r / mar.size()], mar[r % mar.size()]});
  const auto group = static_cast<size_t>(std::max(2, caps.marginal_group));
  for (size_t r : detail::sample_ranks(detail::choose(mar.size(), group), caps.multi_marginal, rng)) {
    std::vector<FaultDescriptor> members;
    for (size_t i : detail::unrank_combination(mar.size(), group, r)) members.push_back(mar[i]);
    emit(FaultPolicy::MultiMarginal, std::move(members));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const FaultDescriptor& f) {
  return {{"id", f.id},         {"device", f.device_path}, {"component", f.component},
          {"kind", to_string(f.kind)}, {"site", to_string(f.site)}, {"r_ohms", f.r_ohms}};
}

inline FaultDescriptor fault_from_json(const nlohmann::json& j) {
  FaultDescriptor f;
  f.id = j.at("id").get<std::string>();
  f.device_path = j.at("device").get<std::string>();
  f.component = j.value("component", std::string{});
  const auto kind = parse_fault_kind(j.at("kind").get<std::string>());
  const auto site = parse_fault_site(j.at("site").get<std::string>());
  if (!kind || !site) throw FaultError("bad kind/site in fault '" + f.id + "'");
  f.kind = *kind;
  f.site = *site;
  f.r_ohms = j.at("r_ohms").get<double>();
  return f;
}

inline nlohmann::json to_json(const FaultSet& s) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& f : s.faults) members.push_back(to_json(f));
  return {{"policy", to_string(s.policy)}, {"members", members}};
}

inline FaultSet fault_set_from_json(const nlohmann::json& j) {
  FaultSet s;
  const auto policy = parse_fault_policy(j.at("policy").get<std::string>());
  if (!policy) throw FaultError("unknown fault policy");
  s.policy = *policy;
  for (const auto& m : j.at("members")) s.faults.push_back(fault_from_json(m));
  if (s.faults.empty()) throw FaultError("fault set without members");
  if ((s.policy == FaultPolicy::Single) != (s.faults.size() == 1))
    throw FaultError("fault set size does not match policy " + std::string(to_string(s.policy)));
  return s;
}

inline nlohmann::json universe_to_json(const std::vector<FaultDescriptor>& faults) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& f : faults) a.push_back(to_json(f));
  return a;
}

inline std::vector<FaultDescriptor> universe_from_json(const nlohmann::json& j) {
  std::vector<FaultDescriptor> out;
  for (const auto& e : j) out.push_back(fault_from_json(e));
  return out;
}

inline nlohmann::json fault_sets_to_json(const std::vector<FaultSet>& sets) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : sets) a.push_back(to_json(s));
  return a;
}

inline std::vector<FaultSet> fault_sets_from_json(const nlohmann::json& j) {
  std::vector<FaultSet> out;
  for (const auto& e : j) out.push_back(fault_set_from_json(e));
  return out;
}

}  // namespace adcfaultlab
