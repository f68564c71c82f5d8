#include <doctest.h>

#include <complex>
#include <random>

#include "icnnopf/powerflow.hpp"
#include "oracles.hpp"

using namespace icnnopf;

namespace {

NetworkCase radial33() { return load_case_file(oracle::case_path("ieee33.case")); }

Injection scaled(const NetworkCase& c, double s) {
  Injection inj = nominal_injection(c);
  inj.p *= s;
  inj.q *= s;
  return inj;
}

// Largest complex power-balance residual of a solution.
double balance_residual(const NetworkCase& c, const Injection& inj, const PowerFlowSolution& s) {
  using cplx = std::complex<double>;
  const auto n = c.bus_count();
  std::vector<cplx> v(n), current(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(s.v_mag(Eigen::Index(i)), s.v_ang(Eigen::Index(i)));
  for (const auto& br : c.branches) {
    const auto a = *c.index_of(br.from_bus), b = *c.index_of(br.to_bus);
    const cplx i_ab = (v[a] - v[b]) / cplx(br.r, br.x);
    current[a] += i_ab;
    current[b] -= i_ab;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == c.slack_index()) continue;
    const cplx s_inj = v[i] * std::conj(current[i]);
    worst = std::max(worst, std::abs(s_inj - cplx(inj.p(Eigen::Index(i)), inj.q(Eigen::Index(i)))));
  }
  return worst;
}

}  // namespace

TEST_CASE("flat no-load case") {
  for (const char* name : {"ieee33.case", "ieee33_meshed.case"}) {
    const NetworkCase c = load_case_file(oracle::case_path(name));
    const Injection zero{Vector::Zero(33), Vector::Zero(33)};
    const PowerFlowSolution s = newton_power_flow(c, zero);
    CHECK(s.converged);
    CHECK(s.iterations <= 1);
    CHECK((s.v_mag.array() == 1.0).all());
    CHECK((s.branch_p.array() == 0.0).all());
  }
  const NetworkCase c = radial33();
  const PowerFlowSolution l = lindistflow(c, Injection{Vector::Zero(33), Vector::Zero(33)});
  CHECK((l.v_mag.array() == 1.0).all());
}

TEST_CASE("two-bus case against the sweep oracle") {
  const NetworkCase c = parse_case(oracle::two_bus_document());
  const Injection inj = nominal_injection(c);
  CHECK(inj.p(1) == -1.0);
  const PowerFlowSolution s = newton_power_flow(c, inj);
  REQUIRE(s.converged);
  const auto ref = oracle::backward_forward_sweep(c, inj);
  REQUIRE(ref.converged);
  CHECK(std::abs(s.v_mag(1) - ref.v_mag(1)) <= 1e-8);
  CHECK(std::abs(s.branch_p(0) - ref.branch_p(0)) <= 1e-8);
  // Closed form for two buses: V^4 + (2(rP + xQ) - 1) V^2 + |z|^2 |S|^2 = 0.
  const double b = 2.0 * (0.01 * 1.0 + 0.01 * 0.5) - 1.0, cc = 2e-4 * 1.25;
  CHECK(ref.v_mag(1) == doctest::Approx(std::sqrt((-b + std::sqrt(b * b - 4.0 * cc)) / 2.0)).epsilon(1e-12));
  CHECK(ref.v_mag(1) == doctest::Approx(0.984754893120).epsilon(1e-11));
  CHECK(s.v_mag(0) == 1.0);
  CHECK(s.v_ang(0) == 0.0);

  // LinDistFlow closed form: sqrt(1 - 2 (r p + x q))
  const PowerFlowSolution l = lindistflow(c, inj);
  CHECK(l.v_mag(1) == doctest::Approx(std::sqrt(0.97)).epsilon(1e-14));
  CHECK(l.v_mag(1) == doctest::Approx(0.98489).epsilon(1e-5));
  CHECK(l.branch_p(0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("33-bus Newton against the sweep oracle") {
  const NetworkCase c = radial33();
  for (double s : {0.1, 0.5, 1.0, 1.4}) {
    const Injection inj = scaled(c, s);
    const PowerFlowSolution sol = newton_power_flow(c, inj);
    REQUIRE(sol.converged);
    const auto ref = oracle::backward_forward_sweep(c, inj);
    REQUIRE(ref.converged);
    CHECK((sol.v_mag - ref.v_mag).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((sol.branch_p - ref.branch_p).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(balance_residual(c, inj, sol) <= 1e-7);
    CHECK(sol.max_mismatch <= 1e-8);
  }
  // Minimum voltage at nominal load, frozen from the sweep oracle.
  const auto ref = oracle::backward_forward_sweep(c, nominal_injection(c));
  CHECK(ref.v_mag.minCoeff() == doctest::Approx(0.913090479361).epsilon(1e-11));
  const PowerFlowSolution nominal = newton_power_flow(c, nominal_injection(c));
  CHECK(std::abs(nominal.v_mag.minCoeff() - 0.913090479361) <= 1e-6);
  // Feeder-head flow minus demand: about 202.7 kW of losses
  CHECK(ref.branch_p(0) == doctest::Approx(3.917677126456).epsilon(1e-11));
  CHECK((nominal.branch_p(0) - 3.715) * 1000.0 == doctest::Approx(202.68).epsilon(1e-4));
}

TEST_CASE("meshed case satisfies power balance") {
  const NetworkCase c = load_case_file(oracle::case_path("ieee33_meshed.case"));
  const Injection inj = nominal_injection(c);
  const PowerFlowSolution s = newton_power_flow(c, inj);
  REQUIRE(s.converged);
  CHECK(balance_residual(c, inj, s) <= 1e-7);
  // Tie lines support the far ends of the feeder.
  CHECK(s.v_mag.minCoeff() > newton_power_flow(radial33(), inj).v_mag.minCoeff());
}

TEST_CASE("non-convergence is reported") {
  const NetworkCase c = radial33();
  const PowerFlowSolution s = newton_power_flow(c, scaled(c, 10.0));
  CHECK_FALSE(s.converged);
  NewtonOptions one;
  one.max_iter = 1;
  CHECK_FALSE(newton_power_flow(c, nominal_injection(c), one).converged);
  CHECK_THROWS_AS(deviation_targets(c, s), PowerFlowError);
}

TEST_CASE("LinDistFlow") {
  const NetworkCase c = radial33();
  SUBCASE("meshed case is rejected") {
    const NetworkCase m = load_case_file(oracle::case_path("ieee33_meshed.case"));
    try {
      lindistflow(m, nominal_injection(m));
      FAIL("expected an error");
    } catch (const PowerFlowError& e) {
      CHECK(std::string(e.what()) == "LinDistFlow requires radial topology");
    }
  }
  SUBCASE("gap to Newton grows with load") {
    double prev = -1.0;
    for (double s : {0.1, 0.5, 1.0}) {
      const Injection inj = scaled(c, s);
      const double gap = (newton_power_flow(c, inj).v_mag - lindistflow(c, inj).v_mag).cwiseAbs().maxCoeff();
      if (s == 0.1) CHECK(gap <= 1e-3);
      CHECK(gap > prev);
      prev = gap;
    }
  }
  SUBCASE("flows are the downstream demand") {
    const PowerFlowSolution l = lindistflow(c, nominal_injection(c));
    CHECK(l.branch_p(0) == doctest::Approx(3.715).epsilon(1e-12));
    // last branch feeds only bus 33 (60 kW)
    CHECK(l.branch_p(31) == doctest::Approx(0.06).epsilon(1e-12));
  }
  SUBCASE("sensitivity matches the solver") {
    const LinDistFlowSensitivity sens = lindistflow_sensitivity(c);
    const Injection inj = scaled(c, 0.8);
    const PowerFlowSolution l = lindistflow(c, inj);
    const Vector v2 = sens.v2_offset + sens.v2_per_p * inj.p + sens.v2_per_q * inj.q;
    CHECK((v2.cwiseSqrt() - l.v_mag).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((sens.flow_per_p * inj.p - l.branch_p).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("deviation targets") {
  NetworkCase c = parse_case(oracle::two_bus_document());
  PowerFlowSolution s;
  s.converged = true;
  s.v_mag = Vector::Constant(2, 1.0);
  s.v_mag(1) = 1.03;
  s.v_ang = Vector::Zero(2);
  s.branch_p = Vector::Constant(1, 10.0);
  const DeviationTargets t = deviation_targets(c, s);
  CHECK(t.v_dev(1) == doctest::Approx(0.03));
  CHECK(t.delta_v(1) == doctest::Approx(0.05));
  CHECK(t.v_dev(0) == doctest::Approx(0.0).epsilon(1e-15));
  // flow exactly at p_max sits on the boundary
  CHECK(t.p_dev(0) == doctest::Approx(t.delta_p(0)));

  SUBCASE("1-Lipschitz in v_mag") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.9, 1.1);
    for (int k = 0; k < 1000; ++k) {
      PowerFlowSolution a = s, b = s;
      a.v_mag(1) = u(rng);
      b.v_mag(1) = u(rng);
      const double d = std::abs(deviation_targets(c, a).v_dev(1) - deviation_targets(c, b).v_dev(1));
      CHECK(d <= std::abs(a.v_mag(1) - b.v_mag(1)) + 1e-15);
    }
  }
}
