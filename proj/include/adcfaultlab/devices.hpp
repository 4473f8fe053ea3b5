#pragma once

// Primitive device constitutive relations and stimulus waveforms.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace adcfaultlab {

/// Generic square-law enhancement n-type TFT parameters.
struct TftModelParams {
  double vth = 0.25;     // V
  double kp = 4e-3;      // A/V^2
  double lambda = 0.05;  // 1/V
  double gmin = 1e-12;   // S, drain-source shunt in every region

  bool operator==(const TftModelParams&) const = default;

  void check() const {
    if (!(kp > 0.0)) throw std::invalid_argument("tft model: kp must be > 0");
    if (!(gmin > 0.0)) throw std::invalid_argument("tft model: gmin must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("tft model: lambda must be >= 0");
  }
};

struct TftOperatingPoint {
  double id = 0.0;   // drain current, positive into the drain terminal
  double gm = 0.0;   // d id / d vgs
  double gds = 0.0;  // d id / d vds
};

namespace detail {

// Forward-mode evaluation, vds >= 0.
inline TftOperatingPoint tft_forward(const TftModelParams& p, double beta, double vgs,
                                     double vds) {
  TftOperatingPoint op;
  const double vov = vgs - p.vth;
  if (vov <= 0.0) {
    op.id = p.gmin * vds;
    op.gds = p.gmin;
    return op;
  }
  const double clm = 1.0 + p.lambda * vds;
  if (vds < vov) {
    const double core = vov * vds - 0.5 * vds * vds;
    op.id = beta * core * clm;
    op.gm = beta * vds * clm;
    op.gds = beta * ((vov - vds) * clm + core * p.lambda);
  } else {
    const double core = 0.5 * vov * vov;
    op.id = beta * core * clm;
    op.gm = beta * vov * clm;
    op.gds = beta * core * p.lambda;
  }
  op.id += p.gmin * vds;
  op.gds += p.gmin;
  return op;
}

}  // namespace detail

/// Drain current and its analytic partials. Negative vds is handled by
/// swapping drain and source, so id(vgs, vds) = -id(vgs - vds, -vds).
inline TftOperatingPoint tft_eval(const TftModelParams& p, double w, double l, double vgs,
                                  double vds) {
  const double beta = p.kp * w / l;
  if (vds >= 0.0) return detail::tft_forward(p, beta, vgs, vds);
  const TftOperatingPoint r = detail::tft_forward(p, beta, vgs - vds, -vds);
  // id = -f(vgs - vds, -vds)
  return {-r.id, -r.gm, r.gm + r.gds};
}

enum class StimulusKind { Dc, Sin, Pulse, Stair };

/// Time-dependent value of an independent voltage source.
///
/// Stair is a monotone staircase ramp: `levels + 1` plateaus from v0 to v1,
/// each held for `hold` seconds, the last one held indefinitely.
struct StimulusSpec {
  StimulusKind kind = StimulusKind::Dc;
  double dc = 0.0;

  double offset = 0.0;
  double amplitude = 0.0;
  double freq = 1.0;

  double v0 = 0.0;
  double v1 = 0.0;
  double period = 1.0;
  double duty = 0.5;

  int levels = 1;
  double hold = 1.0;

  bool operator==(const StimulusSpec&) const = default;

  static StimulusSpec make_dc(double v) {
    StimulusSpec s;
    s.kind = StimulusKind::Dc;
    s.dc = v;
    return s;
  }
  static StimulusSpec make_sin(double offset, double amplitude, double freq) {
    StimulusSpec s;
    s.kind = StimulusKind::Sin;
    s.offset = offset;
    s.amplitude = amplitude;
    s.freq = freq;
    return s;
  }
  static StimulusSpec make_pulse(double low, double high, double period, double duty) {
    StimulusSpec s;
    s.kind = StimulusKind::Pulse;
    s.v0 = low;
    s.v1 = high;
    s.period = period;
    s.duty = duty;
    return s;
  }
  static StimulusSpec make_stair(double from, double to, int levels, double hold) {
    StimulusSpec s;
    s.kind = StimulusKind::Stair;
    s.v0 = from;
    s.v1 = to;
    s.levels = levels;
    s.hold = hold;
    return s;
  }

  /// Throws std::invalid_argument when the parameters violate the kind's invariants.
  void check() const {
    switch (kind) {
      case StimulusKind::Dc:
        break;
      case StimulusKind::Sin:
        if (!(freq > 0.0)) throw std::invalid_argument("SIN frequency must be > 0");
        break;
      case StimulusKind::Pulse:
        if (!(period > 0.0)) throw std::invalid_argument("PULSE period must be > 0");
        if (!(duty > 0.0 && duty < 1.0))
          throw std::invalid_argument("PULSE duty must be in (0, 1)");
        break;
      case StimulusKind::Stair:
        if (levels < 1) throw std::invalid_argument("STAIR needs at least one level");
        if (!(hold > 0.0)) throw std::invalid_argument("STAIR hold time must be > 0");
        break;
    }
  }

  /// Index of the staircase plateau active at time t.
  [[nodiscard]] int stair_level(double t) const {
    // the small bias keeps t = k * hold on plateau k despite rounding
    const double pos = std::floor(t / hold + 1e-9);
    if (pos <= 0.0) return 0;
    if (pos >= levels) return levels;
    return static_cast<int>(pos);
  }
};

inline double stimulus_value(const StimulusSpec& s, double t) {
  switch (s.kind) {
    case StimulusKind::Dc:
      return s.dc;
    case StimulusKind::Sin:
      return s.offset + s.amplitude * std::sin(2.0 * std::numbers::pi * s.freq * t);
    case StimulusKind::Pulse: {
      const double phase = std::fmod(t, s.period);
      return phase < s.duty * s.period ? s.v1 : s.v0;
    }
    case StimulusKind::Stair: {
      const int k = s.stair_level(t);
      return s.v0 + (s.v1 - s.v0) * static_cast<double>(k) / s.levels;
    }
  }
  return 0.0;
}

}  // namespace adcfaultlab
