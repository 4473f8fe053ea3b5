#pragma once

// Modified nodal analysis: Newton-Raphson DC operating point with gmin and
// source stepping, and fixed-step backward-Euler transient analysis.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adcfaultlab/devices.hpp"
#include "adcfaultlab/linalg.hpp"
#include "adcfaultlab/netlist.hpp"

namespace adcfaultlab {

struct SolverOptions {
  double abstol = 1e-9;       // A, KCL residual
  double reltol = 1e-6;       // relative voltage update
  int max_newton_iters = 200;
  int gmin_steps = 10;
  int source_steps = 20;
  double dt = 0.0;            // s; <= 0 selects tstop / 2000
  double tstop = 0.0;         // s
  TftModelParams model;

  void check_dc() const {
    if (!(abstol > 0.0) || !(reltol > 0.0))
      throw std::invalid_argument("solver tolerances must be > 0");
    if (max_newton_iters < 1) throw std::invalid_argument("max_newton_iters must be >= 1");
    model.check();
  }

  [[nodiscard]] double effective_dt() const { return dt > 0.0 ? dt : tstop / 2000.0; }

  void check_transient() const {
    check_dc();
    if (!(tstop > 0.0)) throw std::invalid_argument("tstop must be > 0");
    if (!(effective_dt() > 0.0) || !(tstop > effective_dt()))
      throw std::invalid_argument("need 0 < dt < tstop");
  }
};

class SolverError : public std::runtime_error {
 public:
  enum class Kind { NonConvergence, Singular };

  SolverError(Kind kind, const std::string& where, double time, const std::string& msg)
      : std::runtime_error(msg), kind_(kind), where_(where), time_(time) {}

  [[nodiscard]] Kind kind() const { return kind_; }
  /// Node path (or source branch) most implicated in the failure.
  [[nodiscard]] const std::string& where() const { return where_; }
  [[nodiscard]] double time() const { return time_; }

 private:
  Kind kind_;
  std::string where_;
  double time_;
};

/// Time-sampled solution. Node voltages include ground at column 0.
struct Waveform {
  std::vector<double> times;
  std::vector<std::string> node_names;
  std::vector<std::string> source_names;
  std::vector<double> node_voltages;    // row-major [time x node]
  std::vector<double> source_currents;  // row-major [time x vsource]

  [[nodiscard]] size_t samples() const { return times.size(); }
  [[nodiscard]] double voltage(size_t sample, size_t node) const {
    return node_voltages[sample * node_names.size() + node];
  }
  [[nodiscard]] double current(size_t sample, size_t source) const {
    return source_currents[sample * source_names.size() + source];
  }
  [[nodiscard]] std::vector<double> node_trace(const std::string& name) const {
    auto it = std::find(node_names.begin(), node_names.end(), name);
    if (it == node_names.end()) throw std::out_of_range("waveform has no node '" + name + "'");
    const size_t col = static_cast<size_t>(it - node_names.begin());
    std::vector<double> out(samples());
    for (size_t k = 0; k < samples(); ++k) out[k] = voltage(k, col);
    return out;
  }
  [[nodiscard]] std::vector<double> source_trace(const std::string& name) const {
    auto it = std::find(source_names.begin(), source_names.end(), name);
    if (it == source_names.end())
      throw std::out_of_range("waveform has no source '" + name + "'");
    const size_t col = static_cast<size_t>(it - source_names.begin());
    std::vector<double> out(samples());
    for (size_t k = 0; k < samples(); ++k) out[k] = current(k, col);
    return out;
  }

  bool operator==(const Waveform&) const = default;
};

inline void write_waveform_csv(const Waveform& w, std::ostream& os) {
  os << "time";
  for (size_t n = 1; n < w.node_names.size(); ++n) os << "," << w.node_names[n];
  os << "\n";
  char buf[40];
  for (size_t k = 0; k < w.samples(); ++k) {
    std::snprintf(buf, sizeof buf, "%.9g", w.times[k]);
    os << buf;
    for (size_t n = 1; n < w.node_names.size(); ++n) {
      std::snprintf(buf, sizeof buf, "%.9g", w.voltage(k, n));
      os << "," << buf;
    }
    os << "\n";
  }
}

/// Newton-Raphson engine over one flat circuit. Unknowns are the non-ground
/// node voltages followed by one branch current per voltage source.
class MnaSystem {
 public:
  MnaSystem(const FlatCircuit& c, const SolverOptions& opts)
      : circuit_(c), opts_(opts), n_nodes_(c.node_count() - 1) {
    for (const auto& d : c.devices()) {
      auto u = [](int node) { return node - 1; };
      switch (d.kind) {
        case DeviceKind::Ntft:
          tfts_.push_back({u(d.nodes[0]), u(d.nodes[1]), u(d.nodes[2]), d.w, d.l});
          break;
        case DeviceKind::Resistor:
          resistors_.push_back({u(d.nodes[0]), u(d.nodes[1]), 1.0 / d.value});
          break;
        case DeviceKind::Capacitor:
          caps_.push_back({u(d.nodes[0]), u(d.nodes[1]), d.value});
          break;
        case DeviceKind::VSource:
          sources_.push_back({u(d.nodes[0]), u(d.nodes[1]), d.stimulus});
          source_names_.push_back(d.path);
          break;
      }
    }
    n_ = n_nodes_ + sources_.size();
    jac_ = DenseMatrix(n_);
    rhs_.assign(n_, 0.0);
  }

  [[nodiscard]] size_t unknowns() const { return n_; }
  [[nodiscard]] size_t node_unknowns() const { return n_nodes_; }
  [[nodiscard]] const std::vector<std::string>& source_names() const { return source_names_; }

  /// Evaluation context for one Newton solve.
  struct Context {
    double time = 0.0;
    double dt = 0.0;                         // 0 => DC (capacitors open)
    const std::vector<double>* prev = nullptr;  // previous accepted solution
    double source_scale = 1.0;
    double shunt = 0.0;                      // node-to-ground conductance
  };

  struct Result {
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
  };

  /// Max absolute KCL residual (A) of the circuit equations at x.
  double residual(const std::vector<double>& x, const Context& ctx) {
    assemble(x, ctx, false);
    return kcl_norm();
  }

  /// Runs Newton from x (updated in place). Throws SolverError on a singular
  /// Jacobian; returns converged = false when the iteration budget runs out.
  Result newton(std::vector<double>& x, const Context& ctx) {
    Result res;
    std::vector<double> trial(n_);
    for (int it = 0; it < opts_.max_newton_iters; ++it) {
      assemble(x, ctx, true);
      res.residual = kcl_norm();
      const double merit0 = merit();
      for (size_t i = 0; i < n_; ++i) rhs_[i] = -rhs_[i];
      if (auto bad = lu_solve_in_place(jac_, rhs_, scratch_)) {
        throw SolverError(SolverError::Kind::Singular, unknown_name(*bad), ctx.time,
                          "singular MNA matrix at '" + unknown_name(*bad) + "'");
      }
      double max_dv = 0.0;
      bool small = true;
      for (size_t i = 0; i < n_nodes_; ++i) {
        const double dv = std::abs(rhs_[i]);
        max_dv = std::max(max_dv, dv);
        if (dv > opts_.reltol * std::max(1.0, std::abs(x[i]))) small = false;
      }
      if (!std::isfinite(max_dv)) return res;
      // each node moves at most kStepLimit per iteration; a near-floating
      // node must not shrink the update everywhere else
      step_ = rhs_;
      for (size_t i = 0; i < n_nodes_; ++i) step_[i] = std::clamp(step_[i], -kStepLimit, kStepLimit);
      double scale = 1.0;
      if (small && res.residual < opts_.abstol) {
        for (size_t i = 0; i < n_; ++i) x[i] += scale * step_[i];
        res.converged = true;
        res.iterations = it;
        return res;
      }
      // backtrack while the residual merit grows, unless it is already below abstol
      const double floor = opts_.abstol * opts_.abstol;
      for (int k = 0; k < kMaxBacktrack; ++k) {
        for (size_t i = 0; i < n_; ++i) trial[i] = x[i] + scale * step_[i];
        assemble(trial, ctx, false);
        const double m = merit();
        if (m < merit0 || m < floor || k + 1 == kMaxBacktrack) break;
        scale *= 0.5;
      }
      x.swap(trial);
      res.iterations = it + 1;
    }
    return res;
  }

  /// Node name for unknown index i (branch unknowns are reported as i(<source>)).
  [[nodiscard]] std::string unknown_name(size_t i) const {
    if (i < n_nodes_) return circuit_.nodes()[i + 1];
    return "i(" + source_names_[i - n_nodes_] + ")";
  }

  /// Index of the node with the largest KCL residual at the last assembly.
  [[nodiscard]] size_t worst_node() const {
    size_t worst = 0;
    for (size_t i = 1; i < n_nodes_; ++i)
      if (std::abs(rhs_[i]) > std::abs(rhs_[worst])) worst = i;
    return worst;
  }

 private:
  static constexpr double kStepLimit = 0.5;  // V per Newton update
  static constexpr int kMaxBacktrack = 6;

  struct Tft { int d, g, s; double w, l; };
  struct Two { int a, b; double g; };
  struct Cap { int a, b; double c; };
  struct Src { int p, n; StimulusSpec stim; };

  [[nodiscard]] double kcl_norm() const {
    double r = 0.0;
    for (size_t i = 0; i < n_nodes_; ++i) r = std::max(r, std::abs(rhs_[i]));
    return r;
  }

  // Squared residual norm; branch rows (volts) are weighted into amperes.
  [[nodiscard]] double merit() const {
    constexpr double kBranchWeight = 1e-6;  // S
    double r = 0.0;
    for (size_t i = 0; i < n_nodes_; ++i) r += rhs_[i] * rhs_[i];
    for (size_t i = n_nodes_; i < n_; ++i) {
      const double e = kBranchWeight * rhs_[i];
      r += e * e;
    }
    return r;
  }

  static double v_of(const std::vector<double>& x, int u) { return u < 0 ? 0.0 : x[u]; }

  // Fills rhs_ with F(x) (currents leaving each node, branch equations) and,
  // when `jacobian` is set, jac_ with dF/dx.
  void assemble(const std::vector<double>& x, const Context& ctx, bool jacobian) {
    std::fill(rhs_.begin(), rhs_.end(), 0.0);
    if (jacobian) jac_.clear();
    auto addj = [&](int r, int c, double v) {
      if (jacobian && r >= 0 && c >= 0) jac_(r, c) += v;
    };
    auto addf = [&](int r, double v) {
      if (r >= 0) rhs_[r] += v;
    };
    auto conductance = [&](int a, int b, double g, double i) {
      addf(a, i);
      addf(b, -i);
      addj(a, a, g);
      addj(b, b, g);
      addj(a, b, -g);
      addj(b, a, -g);
    };

    for (const auto& r : resistors_) conductance(r.a, r.b, r.g, r.g * (v_of(x, r.a) - v_of(x, r.b)));
    if (ctx.dt > 0.0) {
      for (const auto& c : caps_) {
        const double g = c.c / ctx.dt;
        const double vnow = v_of(x, c.a) - v_of(x, c.b);
        const double vold = v_of(*ctx.prev, c.a) - v_of(*ctx.prev, c.b);
        conductance(c.a, c.b, g, g * (vnow - vold));
      }
    }
    for (const auto& t : tfts_) {
      const double vs = v_of(x, t.s);
      const auto op = tft_eval(opts_.model, t.w, t.l, v_of(x, t.g) - vs, v_of(x, t.d) - vs);
      addf(t.d, op.id);
      addf(t.s, -op.id);
      addj(t.d, t.g, op.gm);
      addj(t.d, t.d, op.gds);
      addj(t.d, t.s, -op.gm - op.gds);
      addj(t.s, t.g, -op.gm);
      addj(t.s, t.d, -op.gds);
      addj(t.s, t.s, op.gm + op.gds);
    }
    for (size_t k = 0; k < sources_.size(); ++k) {
      const auto& s = sources_[k];
      const int br = static_cast<int>(n_nodes_ + k);
      const double i = x[br];
      addf(s.p, i);
      addf(s.n, -i);
      addj(s.p, br, 1.0);
      addj(s.n, br, -1.0);
      rhs_[br] = v_of(x, s.p) - v_of(x, s.n) - ctx.source_scale * stimulus_value(s.stim, ctx.time);
      addj(br, s.p, 1.0);
      addj(br, s.n, -1.0);
    }
    if (ctx.shunt > 0.0) {
      for (size_t i = 0; i < n_nodes_; ++i) {
        rhs_[i] += ctx.shunt * x[i];
        if (jacobian) jac_(i, i) += ctx.shunt;
      }
    }
  }

  const FlatCircuit& circuit_;
  SolverOptions opts_;
  size_t n_nodes_;
  size_t n_ = 0;
  std::vector<Tft> tfts_;
  std::vector<Two> resistors_;
  std::vector<Cap> caps_;
  std::vector<Src> sources_;
  std::vector<std::string> source_names_;
  DenseMatrix jac_;
  std::vector<double> rhs_;
  std::vector<double> step_;
  std::vector<double> scratch_;
};

namespace detail {

inline void throw_nonconvergence(MnaSystem& sys, const std::vector<double>& x,
                                 const MnaSystem::Context& ctx, const std::string& what) {
  sys.residual(x, ctx);
  const std::string node = sys.node_unknowns() > 0 ? sys.unknown_name(sys.worst_node()) : "";
  throw SolverError(SolverError::Kind::NonConvergence, node, ctx.time,
                    what + " (worst residual at '" + node + "')");
}

// Walks a continuation parameter from 0 to 1 in `steps` nominal increments,
// halving the increment after a failed Newton solve (up to 12 times in a row).
// The total number of solves is capped at 4 * steps + 24, so a point that
// only yields to ever smaller increments fails in bounded time.
template <class Solve>
bool continuation(std::vector<double>& x, int steps, Solve&& solve_at) {
  double s = 0.0;
  double ds = 1.0 / std::max(1, steps);
  const double base = ds;
  int halvings = 0;
  int budget = 4 * std::max(1, steps) + 24;
  std::vector<double> keep = x;
  while (s < 1.0) {
    if (budget-- == 0) return false;
    const double next = std::min(1.0, s + ds);
    if (solve_at(next, x)) {
      s = next;
      keep = x;
      halvings = 0;
      ds = std::min(base, ds * 2.0);
    } else {
      x = keep;
      if (++halvings > 12) return false;
      ds *= 0.5;
    }
  }
  return true;
}

// Plain Newton, then gmin stepping, then source stepping. x holds the
// initial guess on entry and the solution on success.
inline bool solve_point(MnaSystem& sys, std::vector<double>& x, MnaSystem::Context ctx,
                        const SolverOptions& opts) {
  std::vector<double> guess = x;
  if (sys.newton(x, ctx).converged) return true;

  // gmin stepping: geometric shunt ramp from 1e-3 S down to 1e-12 S
  x = guess;
  bool ok = continuation(x, opts.gmin_steps, [&](double s, std::vector<double>& v) {
    MnaSystem::Context c = ctx;
    c.shunt = 1e-3 * std::pow(1e-9, s);
    return sys.newton(v, c).converged;
  });
  if (ok && sys.newton(x, ctx).converged) return true;

  // source stepping from an all-zero state
  std::fill(x.begin(), x.end(), 0.0);
  ok = continuation(x, opts.source_steps, [&](double s, std::vector<double>& v) {
    MnaSystem::Context c = ctx;
    c.source_scale = ctx.source_scale * s;
    return sys.newton(v, c).converged;
  });
  return ok;
}

inline std::vector<double> dc_solve(MnaSystem& sys, const SolverOptions& opts, double t,
                                    std::vector<double> guess) {
  guess.resize(sys.unknowns(), 0.0);
  MnaSystem::Context ctx;
  ctx.time = t;
  if (!solve_point(sys, guess, ctx, opts))
    throw_nonconvergence(sys, guess, ctx, "DC operating point did not converge");
  return guess;
}

}  // namespace detail

struct DcSolution {
  std::vector<double> voltages;         // indexed like FlatCircuit::nodes(), ground at 0
  std::vector<double> source_currents;  // one per voltage source, in device order

  bool operator==(const DcSolution&) const = default;
};

namespace detail {

inline std::vector<double> pack(const MnaSystem& sys, const DcSolution& s) {
  std::vector<double> x(sys.unknowns(), 0.0);
  std::copy(s.voltages.begin() + 1, s.voltages.end(), x.begin());
  std::copy(s.source_currents.begin(), s.source_currents.end(),
            x.begin() + static_cast<long>(sys.node_unknowns()));
  return x;
}

inline DcSolution unpack(const MnaSystem& sys, const std::vector<double>& x) {
  DcSolution s;
  s.voltages.assign(sys.node_unknowns() + 1, 0.0);
  std::copy(x.begin(), x.begin() + static_cast<long>(sys.node_unknowns()), s.voltages.begin() + 1);
  s.source_currents.assign(x.begin() + static_cast<long>(sys.node_unknowns()), x.end());
  return s;
}

}  // namespace detail

inline DcSolution dc_operating_point(const FlatCircuit& c, const SolverOptions& opts,
                                     double time = 0.0) {
  opts.check_dc();
  MnaSystem sys(c, opts);
  return detail::unpack(sys, detail::dc_solve(sys, opts, time, {}));
}

/// Max KCL residual (A) of the DC equations re-stamped at a solution.
inline double kcl_residual(const FlatCircuit& c, const SolverOptions& opts, const DcSolution& s,
                           double time = 0.0) {
  MnaSystem sys(c, opts);
  MnaSystem::Context ctx;
  ctx.time = time;
  return sys.residual(detail::pack(sys, s), ctx);
}

/// Fixed-step backward-Euler transient from the t = 0 operating point.
inline Waveform transient(const FlatCircuit& c, const SolverOptions& opts) {
  opts.check_transient();
  const double dt = opts.effective_dt();
  MnaSystem sys(c, opts);

  Waveform w;
  w.node_names = c.nodes();
  w.source_names = sys.source_names();
  const size_t steps = static_cast<size_t>(std::ceil(opts.tstop / dt - 1e-9));
  w.times.reserve(steps + 1);
  w.node_voltages.reserve((steps + 1) * c.node_count());
  w.source_currents.reserve((steps + 1) * w.source_names.size());

  auto record = [&](double t, const std::vector<double>& x) {
    w.times.push_back(t);
    w.node_voltages.push_back(0.0);
    for (size_t i = 0; i < sys.node_unknowns(); ++i) w.node_voltages.push_back(x[i]);
    for (size_t k = sys.node_unknowns(); k < sys.unknowns(); ++k)
      w.source_currents.push_back(x[k]);
  };

  std::vector<double> x = detail::dc_solve(sys, opts, 0.0, {});
  record(0.0, x);

  std::vector<double> prev;
  for (size_t k = 1; k <= steps; ++k) {
    const double t0 = static_cast<double>(k - 1) * dt;
    const double t1 = k == steps ? opts.tstop : static_cast<double>(k) * dt;
    // on failure the interval is retried in 4, then 16 equal substeps
    bool done = false;
    std::vector<double> start = x;
    for (int sub = 1; sub <= 16 && !done; sub *= 4) {
      x = start;
      done = true;
      for (int j = 1; j <= sub && done; ++j) {
        prev = x;
        MnaSystem::Context ctx;
        ctx.time = j == sub ? t1 : t0 + (t1 - t0) * j / sub;
        ctx.dt = (t1 - t0) / sub;
        ctx.prev = &prev;
        done = detail::solve_point(sys, x, ctx, opts);
      }
    }
    if (!done) {
      MnaSystem::Context ctx;
      ctx.time = t1;
      ctx.dt = t1 - t0;
      ctx.prev = &prev;
      char buf[64];
      std::snprintf(buf, sizeof buf, "transient step did not converge at t = %.6g s", t1);
      detail::throw_nonconvergence(sys, x, ctx, buf);
    }
    record(t1, x);
  }
  return w;
}

}  // namespace adcfaultlab
