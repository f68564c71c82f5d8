#include <doctest.h>

#include "icnnopf/network.hpp"
#include "oracles.hpp"

using namespace icnnopf;

namespace {

const char* kThreeBus = R"([header]
s_base_kva 100
v_base_kv 4.16
per_unit false
[buses]
# id kind p q vmin vmax ctrl
1 slack 0 0 0.95 1.05 0
2 load 100 50 0.95 1.05 1
3 load 40 10 0.9 1.1 0
[branches]
1 2 1.7318 0.8 -500 500
2 3 0.5 0.5
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

std::string error_of(const std::string& text) {
  try {
    parse_case(text);
  } catch (const CaseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("two-bus document is radial") {
  const NetworkCase c = parse_case(oracle::two_bus_document());
  CHECK(c.bus_count() == 2);
  CHECK(c.branch_count() == 1);
  CHECK(c.topology == TopologyKind::Radial);
  CHECK(c.branches[0].r == doctest::Approx(0.01));
}

TEST_CASE("bundled cases") {
  const NetworkCase radial = load_case_file(oracle::case_path("ieee33.case"));
  const NetworkCase meshed = load_case_file(oracle::case_path("ieee33_meshed.case"));
  CHECK(radial.bus_count() == 33);
  CHECK(radial.branch_count() == 32);
  CHECK(radial.topology == TopologyKind::Radial);
  CHECK(meshed.branch_count() == 34);
  CHECK(meshed.topology == TopologyKind::Meshed);
  CHECK(validate_bounds(radial).empty());
  CHECK(radial.control_buses().size() == 6);
  CHECK(radial.buses[radial.slack_index()].id == 1);
  // 3715 kW total demand on a 1000 kVA base
  double p = 0.0;
  for (const auto& b : radial.buses) p += b.p_load;
  CHECK(p == doctest::Approx(3.715).epsilon(1e-12));
}

TEST_CASE("per-unit conversion") {
  const NetworkCase c = parse_case(kThreeBus);
  CHECK(c.per_unit);
  CHECK(c.buses[1].p_load == doctest::Approx(1.0));
  CHECK(c.buses[1].q_load == doctest::Approx(0.5));
  CHECK(c.branches[0].r == doctest::Approx(1.7318 * 100e3 / (4160.0 * 4160.0)).epsilon(1e-14));
  CHECK(c.branches[0].p_max == doctest::Approx(5.0));
  // bounds omitted in a physical document mean +-10 pu
  CHECK(c.branches[1].p_min == doctest::Approx(-10.0));
  CHECK(c.branches[1].p_max == doctest::Approx(10.0));

  SUBCASE("idempotent on per-unit input") { CHECK(to_per_unit(c) == c); }

  SUBCASE("linear in the loads") {
    NetworkCase raw = parse_case_unchecked(kThreeBus);
    NetworkCase scaled = raw;
    for (auto& b : scaled.buses) {
      b.p_load *= 3.0;
      b.q_load *= 3.0;
    }
    const NetworkCase a = to_per_unit(raw), b = to_per_unit(scaled);
    for (std::size_t i = 0; i < a.bus_count(); ++i) {
      CHECK(b.buses[i].p_load == doctest::Approx(3.0 * a.buses[i].p_load));
      CHECK(b.buses[i].q_load == doctest::Approx(3.0 * a.buses[i].q_load));
    }
  }

  SUBCASE("nonpositive base") {
    NetworkCase raw = parse_case_unchecked(kThreeBus);
    raw.s_base_kva = 0.0;
    CHECK_THROWS_AS(to_per_unit(raw), CaseError);
  }
}

TEST_CASE("serialize round-trip") {
  for (const char* name : {"ieee33.case", "ieee33_meshed.case"}) {
    const NetworkCase c = load_case_file(oracle::case_path(name));
    CHECK(parse_case(serialize_case(c)) == c);
    CHECK(case_hash(parse_case(serialize_case(c))) == case_hash(c));
  }
  const NetworkCase small = parse_case(kThreeBus);
  CHECK(parse_case(serialize_case(small)) == small);
}

TEST_CASE("parse errors") {
  CHECK(error_of(replace(kThreeBus, "3 load 40", "3 slack 40")) == "multiple slack buses");
  CHECK(error_of(replace(kThreeBus, "1 slack", "1 load")) == "missing slack bus");
  CHECK(error_of(replace(kThreeBus, "3 load 40", "2 load 40")).find("duplicate bus id") != std::string::npos);
  CHECK(error_of(replace(kThreeBus, "2 3 0.5 0.5", "2 3 0 0")).find("non-physical impedance") !=
        std::string::npos);
  CHECK(error_of(replace(kThreeBus, "2 3 0.5 0.5", "1 2 0.5 0.5")).find("disconnected graph") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_case("[header]\ns_base_kva abc\n"), CaseError);
  CHECK_THROWS_AS(parse_case("1 slack 0 0 0.95 1.05 0\n"), CaseError);
  CHECK_THROWS_AS(parse_case(replace(kThreeBus, "2 load 100 50 0.95 1.05 1", "2 load 100 50 0.95")), CaseError);
}

TEST_CASE("validate_bounds diagnostics") {
  NetworkCase c = load_case_file(oracle::case_path("ieee33.case"));
  SUBCASE("inverted voltage bounds name the bus") {
    c.buses[6].v_min = 1.05;
    c.buses[6].v_max = 0.95;
    const auto d = validate_bounds(c);
    REQUIRE(d.size() == 1);
    CHECK(d[0].subject == "bus 7");
  }
  SUBCASE("branch to a missing bus names the branch") {
    c.branches[3].to_bus = 99;
    const auto d = validate_bounds(c);
    REQUIRE(!d.empty());
    CHECK(d[0].subject.find("branch") != std::string::npos);
    CHECK(d[0].message.find("99") != std::string::npos);
  }
  SUBCASE("inverted flow bounds") {
    c.branches[0].p_min = 1.0;
    c.branches[0].p_max = -1.0;
    CHECK(validate_bounds(c).size() == 1);
  }
}

TEST_CASE("topology matches a spanning-tree check") {
  NetworkCase c = load_case_file(oracle::case_path("ieee33.case"));
  CHECK(classify_topology(c) == TopologyKind::Radial);
  // Same branch count, one branch rewired into a cycle (bus 33 cut off).
  NetworkCase cyc = c;
  cyc.branches.back() = Branch{1, 3, 0.01, 0.01};
  CHECK(classify_topology(cyc) == TopologyKind::Meshed);
  CHECK(!validate_bounds(cyc).empty());
  CHECK(to_string(TopologyKind::Meshed) == "meshed");
}
