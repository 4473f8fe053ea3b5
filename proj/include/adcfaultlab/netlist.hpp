#pragma once

// SPICE-subset netlists: parsing, serialization, validation and flattening.
//
// Grammar (one statement per line, `*` comments, `+` continuation):
//
//   <title line>
//   .GLOBAL <node>...
//   .SUBCKT <name> <port>...
//   M<name> <drain> <gate> <source> NTFT W=<val> L=<val>
//   R<name> <n1> <n2> <ohms>
//   C<name> <n1> <n2> <farads>
//   V<name> <n+> <n-> DC <v> | SIN(<off> <amp> <hz>) | PULSE(<v0> <v1> <period> <duty>)
//                           | STAIR(<from> <to> <levels> <hold>)
//   X<name> <node>... <subckt>
//   .ENDS
//   .END
//
// Names are case-insensitive and normalized to lower case.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adcfaultlab/devices.hpp"

namespace adcfaultlab {

inline constexpr const char* kGround = "0";
inline constexpr const char* kTopComponent = "ControlBlock";

class NetlistError : public std::runtime_error {
 public:
  NetlistError(const std::string& msg, int line = 0, int column = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ":" +
                                          std::to_string(column) + ": " + msg
                                    : msg),
        line_(line),
        column_(column) {}

  [[nodiscard]] int line() const { return line_; }
  [[nodiscard]] int column() const { return column_; }

 private:
  int line_;
  int column_;
};

enum class DeviceKind { Ntft, Resistor, Capacitor, VSource };

inline const char* to_string(DeviceKind k) {
  switch (k) {
    case DeviceKind::Ntft: return "NTFT";
    case DeviceKind::Resistor: return "RESISTOR";
    case DeviceKind::Capacitor: return "CAPACITOR";
    case DeviceKind::VSource: return "VSOURCE";
  }
  return "?";
}

/// Primitive device. Terminal order: NTFT drain, gate, source; others n1/n+, n2/n-.
struct Device {
  std::string name;
  DeviceKind kind = DeviceKind::Resistor;
  std::vector<std::string> terminals;
  double w = 0.0;      // m, NTFT
  double l = 0.0;      // m, NTFT
  double value = 0.0;  // ohms or farads
  StimulusSpec stimulus;

  bool operator==(const Device&) const = default;

  static Device ntft(std::string name, std::string d, std::string g, std::string s, double w,
                     double l) {
    Device dev;
    dev.name = std::move(name);
    dev.kind = DeviceKind::Ntft;
    dev.terminals = {std::move(d), std::move(g), std::move(s)};
    dev.w = w;
    dev.l = l;
    return dev;
  }
  static Device resistor(std::string name, std::string a, std::string b, double ohms) {
    Device dev;
    dev.name = std::move(name);
    dev.kind = DeviceKind::Resistor;
    dev.terminals = {std::move(a), std::move(b)};
    dev.value = ohms;
    return dev;
  }
  static Device capacitor(std::string name, std::string a, std::string b, double farads) {
    Device dev;
    dev.name = std::move(name);
    dev.kind = DeviceKind::Capacitor;
    dev.terminals = {std::move(a), std::move(b)};
    dev.value = farads;
    return dev;
  }
  static Device vsource(std::string name, std::string p, std::string n, StimulusSpec s) {
    Device dev;
    dev.name = std::move(name);
    dev.kind = DeviceKind::VSource;
    dev.terminals = {std::move(p), std::move(n)};
    dev.stimulus = s;
    return dev;
  }
};

struct Instance {
  std::string name;
  std::vector<std::string> nodes;
  std::string subckt;

  bool operator==(const Instance&) const = default;
};

struct Subcircuit {
  std::string name;
  std::vector<std::string> ports;
  std::vector<Device> devices;
  std::vector<Instance> children;

  bool operator==(const Subcircuit&) const = default;
};

struct Netlist {
  std::string title;
  std::map<std::string, Subcircuit> subcircuits;
  std::vector<Device> top_devices;
  std::vector<Instance> top_instances;
  std::set<std::string> global_nodes{kGround};

  bool operator==(const Netlist&) const = default;
};

// ---------------------------------------------------------------------------
// Values

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

/// Parses a number with an optional engineering suffix (f p n u m k meg g).
/// Trailing unit letters after the suffix are ignored, as in SPICE.
inline std::optional<double> parse_value(std::string_view text) {
  const std::string s = to_lower(text);
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr == begin) return std::nullopt;
  std::string_view rest(ptr, static_cast<size_t>(end - ptr));
  double scale = 1.0;
  if (rest.starts_with("meg")) {
    scale = 1e6;
    rest.remove_prefix(3);
  } else if (!rest.empty()) {
    switch (rest.front()) {
      case 'f': scale = 1e-15; break;
      case 'p': scale = 1e-12; break;
      case 'n': scale = 1e-9; break;
      case 'u': scale = 1e-6; break;
      case 'm': scale = 1e-3; break;
      case 'k': scale = 1e3; break;
      case 'g': scale = 1e9; break;
      default: scale = 0.0; break;
    }
    if (scale == 0.0) return std::nullopt;
    rest.remove_prefix(1);
  }
  for (char c : rest)
    if (!std::isalpha(static_cast<unsigned char>(c))) return std::nullopt;
  return v * scale;
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_value(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

struct Token {
  std::string text;
  int line = 0;
  int column = 0;
};

struct Statement {
  std::vector<Token> tokens;
  int line = 0;
};

// '(' ')' ',' are separators; '=' is a token of its own.
inline void tokenize_line(std::string_view text, int line, int col_offset,
                          std::vector<Token>& out) {
  size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')' || c == ',') {
      ++i;
      continue;
    }
    if (c == '=') {
      out.push_back({"=", line, static_cast<int>(i) + 1 + col_offset});
      ++i;
      continue;
    }
    const size_t start = i;
    while (i < text.size()) {
      const char d = text[i];
      if (std::isspace(static_cast<unsigned char>(d)) || d == '(' || d == ')' || d == ',' ||
          d == '=')
        break;
      ++i;
    }
    out.push_back({std::string(text.substr(start, i - start)), line,
                   static_cast<int>(start) + 1 + col_offset});
  }
}

inline std::vector<Statement> split_statements(std::string_view source, std::string& title) {
  std::vector<Statement> out;
  int line_no = 0;
  bool have_title = false;
  size_t pos = 0;
  while (pos <= source.size()) {
    size_t nl = source.find('\n', pos);
    if (nl == std::string_view::npos) nl = source.size();
    std::string_view line = source.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = nl + 1;
    if (!have_title) {
      title = std::string(line);
      have_title = true;
      if (nl == source.size()) break;
      continue;
    }
    size_t first = 0;
    while (first < line.size() && std::isspace(static_cast<unsigned char>(line[first]))) ++first;
    if (first < line.size()) {
      if (line[first] == '*') {
        // comment
      } else if (line[first] == '+') {
        if (out.empty()) throw NetlistError("continuation line without a statement", line_no, 1);
        tokenize_line(line.substr(first + 1), line_no, static_cast<int>(first) + 1,
                      out.back().tokens);
      } else {
        Statement st;
        st.line = line_no;
        tokenize_line(line, line_no, 0, st.tokens);
        out.push_back(std::move(st));
      }
    }
    if (nl == source.size()) break;
  }
  return out;
}

inline double expect_value(const Token& t, const char* what) {
  auto v = parse_value(t.text);
  if (!v) throw NetlistError(std::string("expected ") + what + ", got '" + t.text + "'", t.line,
                             t.column);
  return *v;
}

inline StimulusSpec parse_stimulus(const std::vector<Token>& toks, size_t i, const Token& where) {
  if (i >= toks.size()) throw NetlistError("voltage source needs a value", where.line, where.column);
  const std::string kw = to_lower(toks[i].text);
  auto args = [&](size_t n) {
    if (toks.size() - i - 1 != n)
      throw NetlistError(to_upper(kw) + " expects " + std::to_string(n) + " arguments",
                         toks[i].line, toks[i].column);
    std::vector<double> v;
    for (size_t k = 0; k < n; ++k) v.push_back(expect_value(toks[i + 1 + k], "number"));
    return v;
  };
  StimulusSpec s;
  if (kw == "dc") {
    s = StimulusSpec::make_dc(args(1)[0]);
  } else if (kw == "sin") {
    auto a = args(3);
    s = StimulusSpec::make_sin(a[0], a[1], a[2]);
  } else if (kw == "pulse") {
    auto a = args(4);
    s = StimulusSpec::make_pulse(a[0], a[1], a[2], a[3]);
  } else if (kw == "stair") {
    auto a = args(4);
    if (a[2] != std::floor(a[2]))
      throw NetlistError("STAIR level count must be an integer", toks[i + 3].line,
                         toks[i + 3].column);
    s = StimulusSpec::make_stair(a[0], a[1], static_cast<int>(a[2]), a[3]);
  } else if (toks.size() - i == 1 && parse_value(kw)) {
    s = StimulusSpec::make_dc(*parse_value(kw));
  } else {
    throw NetlistError("unknown source specification '" + toks[i].text + "'", toks[i].line,
                       toks[i].column);
  }
  try {
    s.check();
  } catch (const std::invalid_argument& e) {
    throw NetlistError(e.what(), toks[i].line, toks[i].column);
  }
  return s;
}

struct ScopeRef {
  std::vector<Device>* devices;
  std::vector<Instance>* instances;
  std::set<std::string> names;
};

inline void parse_element(const Statement& st, ScopeRef& scope,
                          std::vector<std::pair<Instance, Token>>& pending) {
  const auto& t = st.tokens;
  const Token& head = t.front();
  const std::string name = to_lower(head.text);
  const char letter = name.front();
  if (!scope.names.insert(name).second)
    throw NetlistError("duplicate device name '" + name + "'", head.line, head.column);
  auto need = [&](size_t n) {
    if (t.size() < n)
      throw NetlistError("too few fields for '" + name + "'", head.line, head.column);
  };
  switch (letter) {
    case 'm': {
      need(5);
      if (to_lower(t[4].text) != "ntft")
        throw NetlistError("unknown transistor model '" + t[4].text + "' (only NTFT)",
                           t[4].line, t[4].column);
      Device d = Device::ntft(name, to_lower(t[1].text), to_lower(t[2].text),
                              to_lower(t[3].text), 0.0, 0.0);
      bool have_w = false, have_l = false;
      size_t i = 5;
      while (i < t.size()) {
        if (i + 2 >= t.size())
          throw NetlistError("expected KEY=VALUE", t[i].line, t[i].column);
        if (t[i + 1].text != "=")
          throw NetlistError("expected '=' after '" + t[i].text + "'", t[i + 1].line,
                             t[i + 1].column);
        const std::string key = to_lower(t[i].text);
        const double v = expect_value(t[i + 2], "number");
        if (key == "w") {
          d.w = v;
          have_w = true;
        } else if (key == "l") {
          d.l = v;
          have_l = true;
        } else {
          throw NetlistError("unknown NTFT parameter '" + t[i].text + "'", t[i].line,
                             t[i].column);
        }
        i += 3;
      }
      if (!have_w || !have_l)
        throw NetlistError("NTFT '" + name + "' needs W= and L=", head.line, head.column);
      scope.devices->push_back(std::move(d));
      break;
    }
    case 'r':
    case 'c': {
      need(4);
      if (t.size() != 4)
        throw NetlistError("unexpected field '" + t[4].text + "'", t[4].line, t[4].column);
      const double v = expect_value(t[3], letter == 'r' ? "resistance" : "capacitance");
      scope.devices->push_back(letter == 'r'
                                   ? Device::resistor(name, to_lower(t[1].text),
                                                      to_lower(t[2].text), v)
                                   : Device::capacitor(name, to_lower(t[1].text),
                                                       to_lower(t[2].text), v));
      break;
    }
    case 'v': {
      need(4);
      scope.devices->push_back(Device::vsource(name, to_lower(t[1].text), to_lower(t[2].text),
                                               parse_stimulus(t, 3, head)));
      break;
    }
    case 'x': {
      need(2);
      Instance inst;
      inst.name = name;
      for (size_t i = 1; i + 1 < t.size(); ++i) inst.nodes.push_back(to_lower(t[i].text));
      inst.subckt = to_lower(t.back().text);
      pending.emplace_back(inst, t.back());
      scope.instances->push_back(std::move(inst));
      break;
    }
    default:
      throw NetlistError("unsupported element '" + head.text + "'", head.line, head.column);
  }
}

}  // namespace detail

/// Parses netlist text. Throws NetlistError carrying line/column on failure.
inline Netlist parse_netlist(std::string_view source) {
  Netlist nl;
  auto statements = detail::split_statements(source, nl.title);

  detail::ScopeRef top{&nl.top_devices, &nl.top_instances, {}};
  std::optional<Subcircuit> open;
  detail::ScopeRef sub{nullptr, nullptr, {}};
  detail::Token open_at;
  std::vector<std::pair<Instance, detail::Token>> pending;
  bool ended = false;

  for (const auto& st : statements) {
    const auto& head = st.tokens.front();
    if (ended) throw NetlistError("statement after .END", head.line, head.column);
    const std::string kw = to_lower(head.text);
    if (kw.front() == '.') {
      if (kw == ".subckt") {
        if (open) throw NetlistError("nested .SUBCKT is not supported", head.line, head.column);
        if (st.tokens.size() < 2) throw NetlistError(".SUBCKT needs a name", head.line, head.column);
        Subcircuit s;
        s.name = to_lower(st.tokens[1].text);
        if (nl.subcircuits.count(s.name))
          throw NetlistError("duplicate subcircuit '" + s.name + "'", st.tokens[1].line,
                             st.tokens[1].column);
        std::set<std::string> seen;
        for (size_t i = 2; i < st.tokens.size(); ++i) {
          auto p = to_lower(st.tokens[i].text);
          if (!seen.insert(p).second)
            throw NetlistError("duplicate port '" + p + "'", st.tokens[i].line,
                               st.tokens[i].column);
          s.ports.push_back(std::move(p));
        }
        open = std::move(s);
        sub = {&open->devices, &open->children, {}};
        open_at = {head.text, head.line, head.column};
      } else if (kw == ".ends") {
        if (!open) throw NetlistError(".ENDS without .SUBCKT", head.line, head.column);
        const std::string name = open->name;
        nl.subcircuits.emplace(name, std::move(*open));
        open.reset();
      } else if (kw == ".end") {
        ended = true;
      } else if (kw == ".global") {
        for (size_t i = 1; i < st.tokens.size(); ++i)
          nl.global_nodes.insert(to_lower(st.tokens[i].text));
      } else {
        throw NetlistError("unknown directive '" + head.text + "'", head.line, head.column);
      }
      continue;
    }
    detail::parse_element(st, open ? sub : top, pending);
  }
  if (open) throw NetlistError("missing .ENDS for '" + open->name + "'", open_at.line, open_at.column);

  for (const auto& [inst, at] : pending) {
    auto it = nl.subcircuits.find(inst.subckt);
    if (it == nl.subcircuits.end())
      throw NetlistError("undefined subcircuit '" + inst.subckt + "'", at.line, at.column);
    if (it->second.ports.size() != inst.nodes.size())
      throw NetlistError("instance '" + inst.name + "' connects " +
                             std::to_string(inst.nodes.size()) + " nodes but '" + inst.subckt +
                             "' has " + std::to_string(it->second.ports.size()) + " ports",
                         at.line, at.column);
  }
  return nl;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string serialize_stimulus(const StimulusSpec& s) {
  switch (s.kind) {
    case StimulusKind::Dc:
      return "DC " + format_value(s.dc);
    case StimulusKind::Sin:
      return "SIN(" + format_value(s.offset) + " " + format_value(s.amplitude) + " " +
             format_value(s.freq) + ")";
    case StimulusKind::Pulse:
      return "PULSE(" + format_value(s.v0) + " " + format_value(s.v1) + " " +
             format_value(s.period) + " " + format_value(s.duty) + ")";
    case StimulusKind::Stair:
      return "STAIR(" + format_value(s.v0) + " " + format_value(s.v1) + " " +
             std::to_string(s.levels) + " " + format_value(s.hold) + ")";
  }
  return {};
}

inline std::string serialize_device(const Device& d) {
  std::string out = d.name;
  for (const auto& t : d.terminals) out += " " + t;
  switch (d.kind) {
    case DeviceKind::Ntft:
      out += " NTFT W=" + format_value(d.w) + " L=" + format_value(d.l);
      break;
    case DeviceKind::Resistor:
    case DeviceKind::Capacitor:
      out += " " + format_value(d.value);
      break;
    case DeviceKind::VSource:
      out += " " + serialize_stimulus(d.stimulus);
      break;
  }
  return out;
}

inline std::string serialize_instance(const Instance& x) {
  std::string out = x.name;
  for (const auto& n : x.nodes) out += " " + n;
  return out + " " + x.subckt;
}

inline std::string serialize(const Netlist& nl) {
  std::ostringstream os;
  os << nl.title << "\n";
  std::string globals;
  for (const auto& g : nl.global_nodes)
    if (g != kGround) globals += " " + g;
  if (!globals.empty()) os << ".GLOBAL" << globals << "\n";
  for (const auto& [name, s] : nl.subcircuits) {
    os << "\n.SUBCKT " << name;
    for (const auto& p : s.ports) os << " " << p;
    os << "\n";
    for (const auto& d : s.devices) os << serialize_device(d) << "\n";
    for (const auto& x : s.children) os << serialize_instance(x) << "\n";
    os << ".ENDS " << name << "\n";
  }
  if (!nl.top_devices.empty() || !nl.top_instances.empty()) os << "\n";
  for (const auto& d : nl.top_devices) os << serialize_device(d) << "\n";
  for (const auto& x : nl.top_instances) os << serialize_instance(x) << "\n";
  os << ".END\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Validation

enum class Severity { Warning, Error };

struct Diagnostic {
  Severity severity = Severity::Error;
  std::string message;
  std::string location;  // "<scope>/<element or node>"
};

namespace detail {

inline void check_devices(const std::vector<Device>& devices, const std::string& scope,
                          std::vector<Diagnostic>& out) {
  for (const auto& d : devices) {
    const std::string where = scope + "/" + d.name;
    const size_t arity = d.kind == DeviceKind::Ntft ? 3 : 2;
    if (d.terminals.size() != arity)
      out.push_back({Severity::Error, "wrong terminal count", where});
    switch (d.kind) {
      case DeviceKind::Ntft:
        if (!(d.w > 0.0)) out.push_back({Severity::Error, "W must be > 0", where});
        if (!(d.l > 0.0)) out.push_back({Severity::Error, "L must be > 0", where});
        break;
      case DeviceKind::Resistor:
        if (!(d.value > 0.0)) out.push_back({Severity::Error, "resistance must be > 0", where});
        break;
      case DeviceKind::Capacitor:
        if (!(d.value >= 0.0))
          out.push_back({Severity::Error, "capacitance must be >= 0", where});
        break;
      case DeviceKind::VSource:
        try {
          d.stimulus.check();
        } catch (const std::invalid_argument& e) {
          out.push_back({Severity::Error, e.what(), where});
        }
        break;
    }
  }
}

}  // namespace detail

/// Checks every structural invariant. Empty result iff the design is clean.
inline std::vector<Diagnostic> validate(const Netlist& nl) {
  std::vector<Diagnostic> out;

  auto check_scope = [&](const std::string& scope, const std::vector<std::string>& ports,
                         const std::vector<Device>& devices,
                         const std::vector<Instance>& children) {
    std::set<std::string> names;
    for (const auto& d : devices)
      if (!names.insert(d.name).second)
        out.push_back({Severity::Error, "duplicate device name", scope + "/" + d.name});
    for (const auto& x : children) {
      if (!names.insert(x.name).second)
        out.push_back({Severity::Error, "duplicate device name", scope + "/" + x.name});
      auto it = nl.subcircuits.find(x.subckt);
      if (it == nl.subcircuits.end()) {
        out.push_back({Severity::Error, "undefined subcircuit '" + x.subckt + "'",
                       scope + "/" + x.name});
      } else if (it->second.ports.size() != x.nodes.size()) {
        out.push_back({Severity::Error, "port count mismatch", scope + "/" + x.name});
      }
    }
    detail::check_devices(devices, scope, out);

    std::map<std::string, int> degree;
    for (const auto& d : devices)
      for (const auto& t : d.terminals) ++degree[t];
    for (const auto& x : children)
      for (const auto& n : x.nodes) ++degree[n];
    for (const auto& p : ports) degree.erase(p);
    for (const auto& [node, deg] : degree)
      if (deg == 1 && !nl.global_nodes.count(node))
        out.push_back({Severity::Warning, "node touched by a single terminal",
                       scope + "/" + node});
  };

  for (const auto& [name, s] : nl.subcircuits) {
    std::set<std::string> seen;
    for (const auto& p : s.ports)
      if (!seen.insert(p).second)
        out.push_back({Severity::Error, "duplicate port", name + "/" + p});
    check_scope(name, s.ports, s.devices, s.children);
  }
  check_scope("<top>", {}, nl.top_devices, nl.top_instances);

  // instantiation cycles
  std::map<std::string, int> state;  // 0 new, 1 visiting, 2 done
  std::function<bool(const std::string&)> cyclic = [&](const std::string& name) {
    auto it = nl.subcircuits.find(name);
    if (it == nl.subcircuits.end()) return false;
    int& st = state[name];
    if (st == 1) return true;
    if (st == 2) return false;
    st = 1;
    for (const auto& x : it->second.children)
      if (cyclic(x.subckt)) return true;
    state[name] = 2;
    return false;
  };
  for (const auto& [name, s] : nl.subcircuits)
    if (state[name] == 0 && cyclic(name))
      out.push_back({Severity::Error, "recursive instantiation", name});
  return out;
}

inline bool has_errors(const std::vector<Diagnostic>& diags) {
  return std::any_of(diags.begin(), diags.end(),
                     [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

// ---------------------------------------------------------------------------
// Flattening

struct FlatDevice {
  std::string path;       // hierarchical, '.'-separated
  DeviceKind kind = DeviceKind::Resistor;
  std::vector<int> nodes;  // indices into FlatCircuit::nodes
  double w = 0.0;
  double l = 0.0;
  double value = 0.0;
  StimulusSpec stimulus;
  std::string component;  // top-level component label

  bool operator==(const FlatDevice&) const = default;
};

/// Device-level circuit. Node 0 is ground.
class FlatCircuit {
 public:
  FlatCircuit() { add_node(kGround); }

  int add_node(const std::string& name) {
    auto [it, inserted] = index_.emplace(name, static_cast<int>(nodes_.size()));
    if (!inserted) throw NetlistError("node '" + name + "' already exists");
    nodes_.push_back(name);
    return it->second;
  }

  int node_or_add(const std::string& name) {
    auto it = index_.find(name);
    return it != index_.end() ? it->second : add_node(name);
  }

  [[nodiscard]] std::optional<int> find_node(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] int node(const std::string& name) const {
    auto i = find_node(name);
    if (!i) throw NetlistError("no node named '" + name + "'");
    return *i;
  }

  void add_device(FlatDevice d) {
    if (!device_index_.emplace(d.path, devices_.size()).second)
      throw NetlistError("duplicate device path '" + d.path + "'");
    devices_.push_back(std::move(d));
  }

  [[nodiscard]] const FlatDevice* find_device(const std::string& path) const {
    auto it = device_index_.find(path);
    return it == device_index_.end() ? nullptr : &devices_[it->second];
  }

  /// Mutable access for rewiring terminals; the path must not change.
  FlatDevice& device_at(size_t i) { return devices_[i]; }
  [[nodiscard]] size_t device_position(const std::string& path) const {
    auto it = device_index_.find(path);
    if (it == device_index_.end()) throw NetlistError("no device '" + path + "'");
    return it->second;
  }

  [[nodiscard]] const std::vector<std::string>& nodes() const { return nodes_; }
  [[nodiscard]] const std::vector<FlatDevice>& devices() const { return devices_; }
  [[nodiscard]] size_t node_count() const { return nodes_.size(); }

  [[nodiscard]] std::map<std::string, std::string> component_of() const {
    std::map<std::string, std::string> out;
    for (const auto& d : devices_) out.emplace(d.path, d.component);
    return out;
  }

  [[nodiscard]] size_t count(DeviceKind k) const {
    return static_cast<size_t>(std::count_if(devices_.begin(), devices_.end(),
                                             [k](const FlatDevice& d) { return d.kind == k; }));
  }

  bool operator==(const FlatCircuit& o) const {
    return nodes_ == o.nodes_ && devices_ == o.devices_;
  }

 private:
  std::vector<std::string> nodes_;
  std::unordered_map<std::string, int> index_;
  std::vector<FlatDevice> devices_;
  std::unordered_map<std::string, size_t> device_index_;
};

namespace detail {

// Top-level instance `xcom3` labels its subtree `COM3`.
inline std::string component_label(const std::string& instance) {
  return to_upper(instance.size() > 1 && instance[0] == 'x' ? instance.substr(1) : instance);
}

inline void expand(const Netlist& nl, const std::vector<Device>& devices,
                   const std::vector<Instance>& children, const std::string& prefix,
                   const std::map<std::string, int>& bound, const std::string& component,
                   std::vector<std::string>& stack, FlatCircuit& out) {
  std::map<std::string, int> local = bound;
  auto resolve = [&](const std::string& n) {
    if (n == kGround) return 0;
    if (auto it = local.find(n); it != local.end()) return it->second;
    const int idx = nl.global_nodes.count(n) ? out.node_or_add(n) : out.add_node(prefix + n);
    local.emplace(n, idx);
    return idx;
  };
  for (const auto& d : devices) {
    FlatDevice f;
    f.path = prefix + d.name;
    f.kind = d.kind;
    for (const auto& t : d.terminals) f.nodes.push_back(resolve(t));
    f.w = d.w;
    f.l = d.l;
    f.value = d.value;
    f.stimulus = d.stimulus;
    f.component = component.empty() ? kTopComponent : component;
    out.add_device(std::move(f));
  }
  for (const auto& x : children) {
    auto it = nl.subcircuits.find(x.subckt);
    if (it == nl.subcircuits.end())
      throw NetlistError("undefined subcircuit '" + x.subckt + "' in '" + prefix + x.name + "'");
    const Subcircuit& s = it->second;
    if (s.ports.size() != x.nodes.size())
      throw NetlistError("port count mismatch instantiating '" + s.name + "' as '" + prefix +
                         x.name + "'");
    if (std::find(stack.begin(), stack.end(), s.name) != stack.end())
      throw NetlistError("recursive instantiation of '" + s.name + "'");
    std::map<std::string, int> ports;
    for (size_t i = 0; i < s.ports.size(); ++i) ports[s.ports[i]] = resolve(x.nodes[i]);
    stack.push_back(s.name);
    expand(nl, s.devices, s.children, prefix + x.name + ".", ports,
           component.empty() ? component_label(x.name) : component, stack, out);
    stack.pop_back();
  }
}

}  // namespace detail

/// Expands the instance tree into a device-level circuit. With `top` empty
/// the top-level scope is flattened; otherwise the named subcircuit is, its
/// ports becoming top nodes of the same name.
inline FlatCircuit flatten(const Netlist& nl, const std::string& top = {}) {
  FlatCircuit out;
  std::vector<std::string> stack;
  if (top.empty()) {
    detail::expand(nl, nl.top_devices, nl.top_instances, "", {}, "", stack, out);
  } else {
    auto it = nl.subcircuits.find(to_lower(top));
    if (it == nl.subcircuits.end()) throw NetlistError("no subcircuit '" + top + "'");
    stack.push_back(it->second.name);
    detail::expand(nl, it->second.devices, it->second.children, "", {}, "", stack, out);
  }
  return out;
}

/// Number of primitive devices in the expanded instance tree, counted
/// without building the flat circuit.
inline size_t primitive_count(const Netlist& nl, const std::string& subckt = {}) {
  const std::vector<Device>* devices = &nl.top_devices;
  const std::vector<Instance>* children = &nl.top_instances;
  if (!subckt.empty()) {
    const auto& s = nl.subcircuits.at(subckt);
    devices = &s.devices;
    children = &s.children;
  }
  size_t n = devices->size();
  for (const auto& x : *children) n += primitive_count(nl, x.subckt);
  return n;
}

}  // namespace adcfaultlab
