#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "adcfaultlab/designs.hpp"
#include "adcfaultlab/netlist.hpp"

using namespace adcfaultlab;

namespace {

const char* kTwoStage = R"(two inverters
* comment line
.GLOBAL vdd
.SUBCKT inv in out
m1 out in 0 NTFT W=2u L=600n
r1 vdd out 26MEG
.ENDS inv
vdd vdd 0 DC 1
vin a 0 STAIR(0 1 8 1m)
x1 a b inv
x2 b
+ c inv
c1 c 0 10f
.END
)";

bool has_message(const std::vector<Diagnostic>& d, const std::string& text) {
  for (const auto& x : d)
    if (x.message.find(text) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(ParseValue, EngineeringSuffixes) {
  EXPECT_DOUBLE_EQ(*parse_value("2u"), 2e-6);
  EXPECT_DOUBLE_EQ(*parse_value("600n"), 600e-9);
  EXPECT_DOUBLE_EQ(*parse_value("26MEG"), 26e6);
  EXPECT_DOUBLE_EQ(*parse_value("10f"), 10e-15);
  EXPECT_DOUBLE_EQ(*parse_value("1.5k"), 1500.0);
  EXPECT_DOUBLE_EQ(*parse_value("3m"), 3e-3);
  EXPECT_DOUBLE_EQ(*parse_value("-0.25"), -0.25);
  EXPECT_FALSE(parse_value("abc").has_value());
  EXPECT_FALSE(parse_value("").has_value());
}

TEST(ParseNetlist, HierarchyAndContinuation) {
  const Netlist nl = parse_netlist(kTwoStage);
  EXPECT_EQ(nl.title, "two inverters");
  ASSERT_EQ(nl.subcircuits.count("inv"), 1u);
  EXPECT_EQ(nl.subcircuits.at("inv").ports, (std::vector<std::string>{"in", "out"}));
  ASSERT_EQ(nl.top_instances.size(), 2u);
  EXPECT_EQ(nl.top_instances[1].nodes, (std::vector<std::string>{"b", "c"}));
  EXPECT_TRUE(nl.global_nodes.count("vdd"));
  EXPECT_EQ(primitive_count(nl), 3u + 2u * 2u);
}

TEST(ParseNetlist, StairStimulus) {
  const Netlist nl = parse_netlist(kTwoStage);
  const auto& vin = nl.top_devices[1];
  ASSERT_EQ(vin.kind, DeviceKind::VSource);
  EXPECT_EQ(vin.stimulus.kind, StimulusKind::Stair);
  EXPECT_EQ(vin.stimulus.levels, 8);
  EXPECT_DOUBLE_EQ(vin.stimulus.hold, 1e-3);
}

TEST(ParseNetlist, ErrorsCarryLineAndColumn) {
  try {
    parse_netlist("t\nr1 a b 1k\nq1 a b c\n");
    FAIL();
  } catch (const NetlistError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 1);
  }
  EXPECT_THROW(parse_netlist("t\n.SUBCKT s a\nr1 a 0 1k\n"), NetlistError);          // no .ENDS
  EXPECT_THROW(parse_netlist("t\nx1 a b nosuch\n"), NetlistError);                   // undefined
  EXPECT_THROW(parse_netlist("t\nm1 a b c PMOS W=1u L=1u\n"), NetlistError);         // model
  EXPECT_THROW(parse_netlist("t\nm1 a b c NTFT W=1u\n"), NetlistError);              // missing L
  EXPECT_THROW(parse_netlist("t\nr1 a b 1k\nr1 a b 2k\n"), NetlistError);            // duplicate
  EXPECT_THROW(parse_netlist("t\nr1 a b ohm\n"), NetlistError);                      // bad value
  EXPECT_THROW(parse_netlist("t\n.END\nr1 a b 1k\n"), NetlistError);                 // after .END
  EXPECT_THROW(parse_netlist("t\n.SUBCKT s a b\n.ENDS\nx1 a s\n"), NetlistError);    // port count
}

TEST(Validate, FlagsBadValuesAndDanglingNodes) {
  Netlist nl;
  nl.top_devices = {Device::resistor("r1", "a", "0", -5.0),
                    Device::ntft("m1", "a", "g", "0", 0.0, 600e-9)};
  const auto d = validate(nl);
  EXPECT_TRUE(has_errors(d));
  bool warned = false;
  for (const auto& x : d) warned |= x.severity == Severity::Warning;
  EXPECT_TRUE(warned);
}

TEST(Validate, BundledDesignsAreClean) {
  for (Variant v : {Variant::Baseline, Variant::Sfr, Variant::Eclr})
    EXPECT_FALSE(has_errors(validate(build_design(v).netlist))) << to_string(v);
}

TEST(Validate, RecursiveInstantiation) {
  Netlist nl;
  Subcircuit s;
  s.name = "loop";
  s.ports = {"a"};
  s.children = {{"x1", {"a"}, "loop"}};
  nl.subcircuits.emplace("loop", s);
  nl.top_instances = {{"x0", {"n"}, "loop"}};
  EXPECT_TRUE(has_message(validate(nl), "recursive"));
  EXPECT_THROW(flatten(nl), NetlistError);
}

TEST(Flatten, PathsAndComponents) {
  const FlatCircuit c = flatten(parse_netlist(kTwoStage));
  ASSERT_NE(c.find_device("x1.m1"), nullptr);
  ASSERT_NE(c.find_device("x2.r1"), nullptr);
  EXPECT_EQ(c.find_device("x1.m1")->component, "1");
  EXPECT_EQ(c.find_device("vdd")->component, kTopComponent);
  // global vdd is shared, internal nodes are prefixed
  EXPECT_EQ(c.find_device("x1.r1")->nodes[0], c.node("vdd"));
  EXPECT_EQ(c.find_device("x2.m1")->nodes[1], c.node("b"));
  EXPECT_EQ(c.devices().size(), primitive_count(parse_netlist(kTwoStage)));
}

TEST(Flatten, ComponentLabelsStripInstancePrefix) {
  const FlatCircuit c = flatten(build_baseline().netlist);
  EXPECT_EQ(c.find_device("xcom3.m0")->component, "COM3");
  EXPECT_EQ(c.find_device("xinv1.m")->component, "INV1");
  EXPECT_EQ(c.find_device("mt0")->component, "ControlBlock");
}

// Property: serialize then parse is the identity on every bundled design.
TEST(Serialize, RoundTripsBundledDesigns) {
  for (Variant v : {Variant::Baseline, Variant::Sfr, Variant::Eclr}) {
    const Netlist nl = build_design(v).netlist;
    const Netlist back = parse_netlist(serialize(nl));
    EXPECT_EQ(back, nl) << to_string(v);
    EXPECT_EQ(serialize(back), serialize(nl));
    EXPECT_EQ(flatten(back), flatten(nl));
  }
}

TEST(Serialize, RoundTripsHandWrittenNetlist) {
  const Netlist nl = parse_netlist(kTwoStage);
  EXPECT_EQ(parse_netlist(serialize(nl)), nl);
}

TEST(Serialize, FormatValueRoundTrips) {
  for (double v : {1.0, 0.1, 2e-6, 92857142.857142851, 1e-15, 123456.789})
    EXPECT_EQ(*parse_value(format_value(v)), v);
}

TEST(DesignFiles, CommittedNetlistsMatchBuilders) {
  for (Variant v : {Variant::Baseline, Variant::Sfr, Variant::Eclr}) {
    const std::string path =
        std::string(ADCFAULTLAB_SOURCE_DIR) + "/designs/" + to_string(v) + ".ckt";
    std::ifstream in(path);
    ASSERT_TRUE(in) << path;
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_EQ(ss.str(), serialize(build_design(v).netlist)) << path;
  }
}
