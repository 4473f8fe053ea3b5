#pragma once

// Bundled 3-bit binary-search ADC reference designs and the ideal quantizer.
//
// Signal path. The input network maps vin in [0, vdd] linearly onto the
// comparator window vi = kWindowLow + kWindowSpan * vin, which keeps every
// differential pair inside the common-mode range an n-type-only stage can
// handle. The reference ladder is tapped on the same mapping, so the k-th tap
// sits at the image of k * vdd / 8 and decisions happen at the usual binary
// search thresholds.
//
//   COM0 vi vs r4          -> D2 (d2, d2b)
//   COM1 vi vs r2, COM2 vi vs r6, steered by T0/T1 on d2b/d2 -> m1
//   INV0, INV1 regenerate m1 -> d1b, d1
//   T2..T5 steer r1/r5 (q3) and r3/r7 (q4) on d2b/d2
//   COM3 vi vs q3, COM4 vi vs q4, steered by T6/T7 on d1b/d1 -> D0

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adcfaultlab/netlist.hpp"

namespace adcfaultlab {

enum class Variant { Baseline, Sfr, Eclr };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Sfr: return "sfr";
    case Variant::Eclr: return "eclr";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  const std::string s = to_lower(name);
  if (s == "baseline") return Variant::Baseline;
  if (s == "sfr") return Variant::Sfr;
  if (s == "eclr") return Variant::Eclr;
  return std::nullopt;
}

struct DesignVariant {
  Variant variant = Variant::Baseline;
  Netlist netlist;
  std::string description;
};

namespace design {

inline constexpr double kVdd = 1.0;
inline constexpr int kBits = 3;
inline constexpr const char* kInputSource = "vin";
inline constexpr const char* kSupplySource = "vdd";
/// Output node paths, most significant bit first.
inline const std::vector<std::string> kOutputs = {"d2", "d1", "d0"};

inline constexpr double kWindowLow = 0.28;   // V, image of vin = 0
inline constexpr double kWindowSpan = 0.26;  // V per volt of vin
inline constexpr double kLadderCurrent = 13e-9;
inline constexpr double kInputResistance = 100e6;
inline constexpr double kNodeCap = 10e-15;
inline constexpr double kL = 600e-9;

}  // namespace design

namespace detail {

inline Device tft(const char* name, const char* d, const char* g, const char* s, double w_um) {
  return Device::ntft(name, d, g, s, w_um / 1e6, design::kL);
}

// Resistor-loaded differential comparator; `out` follows inp > inn.
// M2-M4 form a diode stack fed through R3 that mirrors into the M5/M6 tail.
// With `m7` set, a third tail device shares the mirror and every tail device
// shrinks to 3/4 width, so the nominal tail current rises by only 1/8.
inline Subcircuit comparator(const std::string& name, double w_pair, double w_tail,
                             double w_bias, double r_bias, bool m7) {
  if (m7) w_tail *= 0.75;
  Subcircuit s;
  s.name = name;
  s.ports = {"inp", "inn", "out", "outb", "vdd"};
  s.devices = {
      tft("m0", "outb", "inp", "t", w_pair),
      tft("m1", "out", "inn", "t", w_pair),
      tft("m2", "vb", "vb", "0", w_pair),
      tft("m3", "y", "y", "x", w_bias),
      tft("m4", "x", "x", "vb", w_bias),
      tft("m5", "t", "vb", "0", w_tail),
      tft("m6", "t", "vb", "0", w_tail),
  };
  if (m7) s.devices.push_back(tft("m7", "t", "vb", "0", w_tail));
  s.devices.push_back(Device::resistor("r1", "vdd", "out", 71e6));
  s.devices.push_back(Device::resistor("r2", "vdd", "outb", 71e6));
  s.devices.push_back(Device::resistor("r3", "vdd", "y", r_bias));
  return s;
}

// Single-ended COM1: diode load on the inp side, resistor load on the
// output, tail mirrored from an external bias node `nb`.
inline Subcircuit comparator_single() {
  Subcircuit s;
  s.name = "compc";
  s.ports = {"inp", "inn", "out", "nb", "vdd"};
  s.devices = {
      tft("m0", "n1", "inp", "t", 2),
      tft("m1", "out", "inn", "t", 2),
      tft("m3", "vdd", "vdd", "n1", 2),
      tft("m4", "nb", "nb", "0", 2),
      tft("m5", "t", "nb", "0", 5),
      tft("m6", "t", "nb", "0", 5),
      Device::resistor("r1", "vdd", "out", 11.37e6),
  };
  return s;
}

inline Subcircuit inverter(const std::string& name, bool redundant) {
  Subcircuit s;
  s.name = name;
  s.ports = {"in", "out", "vdd"};
  s.devices = {tft("m", "out", "in", "0", 3)};
  if (redundant) s.devices.push_back(tft("m_1", "out", "in", "0", 2));
  s.devices.push_back(Device::resistor("r", "vdd", "out", 26e6));
  return s;
}

struct Hardening {
  bool sfr = false;
  bool eclr = false;
};

inline Netlist build_adc(Hardening h) {
  using namespace design;
  Netlist nl;
  nl.title = "3-bit binary search ADC";
  auto add = [&](Subcircuit s) { nl.subcircuits.emplace(s.name, std::move(s)); };
  add(comparator("compa", 8, 5, 2, 24e6, false));
  add(comparator("compb", 2, 2, 2, 49.7e6, false));
  add(comparator_single());
  add(inverter("inv", false));
  if (h.eclr) {
    add(comparator("compa7", 8, 5, 2, 24e6, true));
    add(comparator("compb7", 2, 2, 2, 49.7e6, true));
  }
  if (h.sfr) add(inverter("invr", true));

  auto& top = nl.top_devices;
  top.push_back(Device::vsource("vdd", "vdd", "0", StimulusSpec::make_dc(kVdd)));
  top.push_back(Device::vsource("vin", "vin", "0", StimulusSpec::make_dc(0.0)));

  // input network: vi = low + span * vin via RA into the RB/RC divider
  const double ga = 1.0 / kInputResistance;
  top.push_back(Device::resistor("ra", "vin", "ta", kInputResistance));
  top.push_back(tft("mta0", "ta", "vdd", "vi", 2));
  if (h.sfr) {
    top.push_back(tft("mta_1", "ta", "vdd", "vi", 2));
    top.push_back(tft("mta_2", "ta", "vdd", "vi", 2));
  }
  top.push_back(Device::resistor("rb", "vdd", "vi", 1.0 / (ga * kWindowLow / kWindowSpan)));
  top.push_back(Device::resistor(
      "rc", "vi", "0", 1.0 / (ga * (kVdd - kWindowSpan - kWindowLow) / kWindowSpan)));

  // ladder: tap rk = low + span * k / 8
  const double seg = kWindowSpan / 8.0 / kLadderCurrent;
  top.push_back(
      Device::resistor("rlt", "vdd", "r8", (kVdd - kWindowLow - kWindowSpan) / kLadderCurrent));
  for (int k = 8; k >= 1; --k)
    top.push_back(Device::resistor("rl" + std::to_string(k), "r" + std::to_string(k),
                                   "r" + std::to_string(k - 1), seg));
  top.push_back(Device::resistor("rlb", "r0", "0", kWindowLow / kLadderCurrent));
  top.push_back(Device::resistor("rb1", "vdd", "nb1", 33e6));

  top.push_back(tft("mt0", "c1", "d2b", "m1", 2));
  top.push_back(tft("mt1", "c2", "d2", "m1", 2));
  if (h.sfr) {
    top.push_back(tft("mt0_1", "c1", "d2b", "m1", 2));
    top.push_back(tft("mt1_1", "c2", "d2", "m1", 2));
  }
  top.push_back(Device::resistor("rpd", "m1", "0", 100e6));
  top.push_back(tft("mt2", "r1", "d2b", "q3", 2));
  top.push_back(tft("mt3", "r5", "d2", "q3", 2));
  top.push_back(tft("mt4", "r3", "d2b", "q4", 2));
  top.push_back(tft("mt5", "r7", "d2", "q4", 2));
  top.push_back(tft("mt6", "c3", "d1b", "d0", 2));
  top.push_back(tft("mt7", "c4", "d1", "d0", 2));
  for (const char* n : {"d0", "d1", "d2", "q3", "q4", "m1", "vi"})
    top.push_back(Device::capacitor(std::string("c") + n, n, "0", kNodeCap));

  const char* ca = h.eclr ? "compa7" : "compa";
  const char* cb = h.eclr ? "compb7" : "compb";
  nl.top_instances = {
      {"xcom0", {"vi", "r4", "d2", "d2b", "vdd"}, ca},
      {"xcom1", {"vi", "r2", "c1", "nb1", "vdd"}, "compc"},
      {"xcom2", {"vi", "r6", "c2", "c2b", "vdd"}, "compa"},
      {"xcom3", {"vi", "q3", "c3", "c3b", "vdd"}, cb},
      {"xcom4", {"vi", "q4", "c4", "c4b", "vdd"}, cb},
      {"xinv0", {"m1", "d1b", "vdd"}, h.sfr ? "invr" : "inv"},
      {"xinv1", {"d1b", "d1", "vdd"}, h.eclr ? "invr" : "inv"},
  };
  return nl;
}

}  // namespace detail

inline DesignVariant build_baseline() {
  return {Variant::Baseline, detail::build_adc({}),
          "baseline 3-bit binary search ADC, 45 NTFTs"};
}

/// Baseline plus parallel duplicates of TA0 (two), T0, T1 and the INV0 driver.
inline DesignVariant build_sfr() {
  return {Variant::Sfr, detail::build_adc({.sfr = true}),
          "selective front-end redundancy: TA.1/TA.2, T0.1/T1.1, INV0 duplicate"};
}

/// SFR plus a duplicated INV1 output driver and a third tail device M7 in
/// COM0, COM3 and COM4.
inline DesignVariant build_eclr() {
  return {Variant::Eclr, detail::build_adc({.sfr = true, .eclr = true}),
          "extended comparator-level redundancy: SFR + INV1 duplicate + M7 in COM0/COM3/COM4"};
}

inline DesignVariant build_design(Variant v) {
  switch (v) {
    case Variant::Baseline: return build_baseline();
    case Variant::Sfr: return build_sfr();
    case Variant::Eclr: return build_eclr();
  }
  throw std::invalid_argument("unknown variant");
}

/// floor(vin / (vdd / 2^N)) clamped to 2^N - 1.
inline int ideal_code(double vin, double vdd, int n_bits) {
  if (!(vdd > 0.0)) throw std::invalid_argument("ideal_code: vdd must be > 0");
  if (n_bits < 1 || n_bits > 30) throw std::invalid_argument("ideal_code: bad bit count");
  if (!(vin >= 0.0 && vin <= vdd)) throw std::out_of_range("ideal_code: vin outside [0, vdd]");
  const int top = (1 << n_bits) - 1;
  const int code = static_cast<int>(std::floor(vin / (vdd / (1 << n_bits))));
  return code > top ? top : code;
}

}  // namespace adcfaultlab
