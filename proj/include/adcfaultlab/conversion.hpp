#pragma once

// One full conversion run: drive the input with a settled staircase ramp,
// simulate, digitize, and reduce to a DNL report and fault class. Also the
// DC operating-point code oracle used to cross-check ramp transitions.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adcfaultlab/designs.hpp"
#include "adcfaultlab/metrics.hpp"
#include "adcfaultlab/solver.hpp"

namespace adcfaultlab {

/// Names and ranges that connect a netlist to the conversion harness.
struct AdcInterface {
  std::string input_source = design::kInputSource;
  std::string supply_source = design::kSupplySource;
  std::vector<std::string> outputs = design::kOutputs;
  double vdd = design::kVdd;
  int n_bits = design::kBits;

  bool operator==(const AdcInterface&) const = default;
};

struct ConversionSetup {
  int steps_per_code = 128;     // ramp plateaus per LSB
  int samples_per_step = 4;
  double hold = 1e-3;           // s per plateau
  double settle_fraction = 0.25;
  std::optional<double> threshold;  // digitizer threshold; vdd / 2 when unset

  bool operator==(const ConversionSetup&) const = default;

  void check() const {
    if (steps_per_code < 1) throw std::invalid_argument("steps_per_code must be >= 1");
    if (samples_per_step < 1) throw std::invalid_argument("samples_per_step must be >= 1");
    if (!(hold > 0.0)) throw std::invalid_argument("hold must be > 0");
    if (!(settle_fraction >= 0.0 && settle_fraction < 1.0))
      throw std::invalid_argument("settle_fraction must lie in [0, 1)");
  }
};

/// Staircase whose plateaus sit at the centers of 2^N * steps_per_code equal
/// input bins, so no plateau lands exactly on an ideal code boundary.
inline StimulusSpec make_ramp(const ConversionSetup& s, const AdcInterface& adc) {
  const int m = (1 << adc.n_bits) * s.steps_per_code;
  const double half = adc.vdd / (2.0 * m);
  return StimulusSpec::make_stair(half, adc.vdd - half, m - 1, s.hold);
}

/// Copy of `c` with the named source's stimulus replaced.
inline FlatCircuit with_stimulus(const FlatCircuit& c, const std::string& source,
                                 const StimulusSpec& stim) {
  FlatCircuit out = c;
  const FlatDevice* d = out.find_device(source);
  if (!d || d->kind != DeviceKind::VSource)
    throw std::invalid_argument("no voltage source '" + source + "'");
  out.device_at(out.device_position(source)).stimulus = stim;
  return out;
}

struct ConversionRun {
  StimulusSpec ramp;
  Waveform wave;
  SteppedCodes steps;
  DnlReport dnl;
  FaultClass cls = FaultClass::Catastrophic;
  double power = 0.0;  // W
};

/// Runs one ramp conversion. Solver errors propagate.
inline ConversionRun simulate_conversion(const FlatCircuit& c, SolverOptions opts,
                                         const ConversionSetup& setup,
                                         const AdcInterface& adc = {}) {
  setup.check();
  ConversionRun run;
  run.ramp = make_ramp(setup, adc);
  const FlatCircuit driven = with_stimulus(c, adc.input_source, run.ramp);
  opts.dt = setup.hold / setup.samples_per_step;
  opts.tstop = opts.dt * (static_cast<double>(run.ramp.levels + 1) * setup.samples_per_step - 1);
  run.wave = transient(driven, opts);
  const double threshold = setup.threshold.value_or(adc.vdd / 2.0);
  const auto codes = digitize(run.wave, adc.outputs, threshold);
  run.steps = step_codes(run.ramp, run.wave.times, codes, setup.settle_fraction);
  run.dnl = analyze_ramp(run.steps, adc.n_bits, adc.vdd);
  run.cls = classify(run.dnl);
  run.power = estimate_power(run.wave, adc.supply_source, adc.vdd);
  return run;
}

/// Output code of the DC operating point at a fixed input voltage.
inline int dc_code(const FlatCircuit& c, const SolverOptions& opts, double vin,
                   const AdcInterface& adc = {}, std::optional<double> threshold = {}) {
  const FlatCircuit driven = with_stimulus(c, adc.input_source, StimulusSpec::make_dc(vin));
  const DcSolution s = dc_operating_point(driven, opts);
  const double th = threshold.value_or(adc.vdd / 2.0);
  int code = 0;
  for (const auto& name : adc.outputs)
    code = (code << 1) | (s.voltages[static_cast<size_t>(driven.node(name))] > th ? 1 : 0);
  return code;
}

/// Input voltage above which the DC code stays >= k + 1, to within `tol`.
/// A scan on `grid` points brackets each boundary before bisecting, since a
/// comparator balanced exactly on its threshold can leave a one-point glitch
/// in the DC transfer that plain bisection would lock onto.
inline std::vector<double> bisect_transitions(const FlatCircuit& c, const SolverOptions& opts,
                                              double tol, const AdcInterface& adc = {},
                                              int grid = 128) {
  if (grid < 2) throw std::invalid_argument("bisect_transitions: grid must be >= 2");
  std::vector<double> xs;
  std::vector<int> codes;
  for (int i = 0; i <= grid; ++i) {
    xs.push_back(adc.vdd * i / grid);
    codes.push_back(dc_code(c, opts, xs.back(), adc));
  }
  std::vector<double> out;
  for (int k = 0; k + 1 < (1 << adc.n_bits); ++k) {
    // first grid point from which every later point reads >= k + 1
    size_t first = xs.size();
    while (first > 0 && codes[first - 1] >= k + 1) --first;
    if (first == 0 || first == xs.size())
      throw std::runtime_error("bisect_transitions: boundary " + std::to_string(k) +
                               " not bracketed");
    double lo = xs[first - 1];
    double hi = xs[first];
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      (dc_code(c, opts, mid, adc) >= k + 1 ? hi : lo) = mid;
    }
    out.push_back(0.5 * (lo + hi));
  }
  return out;
}

}  // namespace adcfaultlab
