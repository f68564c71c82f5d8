#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "icnnopf/opf.hpp"
#include "icnnopf/report.hpp"
#include "oracles.hpp"

using namespace icnnopf;
namespace fs = std::filesystem;

namespace {

NetworkCase radial33() { return load_case_file(oracle::case_path("ieee33.case")); }

struct Trained {
  NetworkCase c;
  ControlLayout layout;
  LabeledDataset d;
  IcnnModel v, p;
};

// Small surrogates, trained once per process.
const Trained& trained() {
  static const Trained t = [] {
    Trained r{radial33(), {}, {}, {}, {}};
    r.layout = default_control_layout(r.c);
    r.d = build_dataset(r.c, sample_scenarios(r.c, r.layout, 400, {}, 11));
    fixture::SurrogateTraining cfg;
    cfg.hidden = {16, 16};
    cfg.epochs = 40;
    r.v = fixture::train_surrogate(r.d, true, cfg);
    r.p = fixture::train_surrogate(r.d, false, cfg);
    return r;
  }();
  return t;
}

OpfRunOptions quick_options() {
  OpfRunOptions o;
  o.solver.mu = 0.05;
  o.solver.max_iter = 4000;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int line_count(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("violation counting") {
  DeviationTargets t;
  t.v_dev = (Vector(4) << 0.0, 0.05, 0.052, 0.06).finished();
  t.delta_v = Vector::Constant(4, 0.05);
  t.p_dev = (Vector(2) << 0.0, 2.0).finished();
  t.delta_p = Vector::Constant(2, 1.0);
  const ViolationSummary strict = count_violations(t, 0.0);
  CHECK(strict.voltage == 2);
  CHECK(strict.flow == 1);
  CHECK(strict.worst_voltage_excess == doctest::Approx(0.01));
  CHECK(count_violations(t, 0.005).voltage == 1);
  t.v_dev.setZero();
  CHECK(count_violations(t, 0.0).worst_voltage_excess == doctest::Approx(-0.05));
}

TEST_CASE("violation context synthesis") {
  const NetworkCase c = radial33();
  const ViolationContext v = synthesize_violation_context(c);
  CHECK(v.load_scale == doctest::Approx(0.65));
  CHECK(v.violated_buses == 9);
  const Context ref = scaled_context(c, v.load_scale);
  CHECK((v.context.p_u - ref.p_u).cwiseAbs().maxCoeff() <= 1e-15);
  // The previous step was below the threshold.
  const PowerFlowSolution prev = newton_power_flow(c, [&] {
    const Context x = scaled_context(c, 0.6);
    return Injection{x.p_u, x.q_u};
  }());
  CHECK(count_violations(deviation_targets(c, prev), 0.0).voltage < 3);
  CHECK(synthesize_violation_context(c, 1).violated_buses >= 1);
  CHECK_THROWS_AS(synthesize_violation_context(c, 100), SolverError);
  CHECK_THROWS_AS(synthesize_violation_context(c, 3, 0.5, 0.0), SolverError);
}

TEST_CASE("LinDistFlow OPF constraints") {
  const NetworkCase c = radial33();
  const ControlLayout layout = default_control_layout(c);
  const Context ctx = scaled_context(c, 0.8);
  const SaddleProblem prob = build_lindistflow_opf(c, layout, ctx, {}, ControlMode::CoordinatedPQ);
  REQUIRE(prob.constraints.size() == 2);
  const FeatureMap fm(c, layout);
  std::mt19937_64 rng(2);
  for (int k = 0; k < 5; ++k) {
    const Vector x = prob.feasible.sample(rng);
    const PowerFlowSolution l = lindistflow(c, fm.net_injection(x, ctx.p_u, ctx.q_u));
    const Vector g = prob.constraints[0].block->value(x);
    const Vector v2 = l.v_mag.array().square();
    CHECK((g.head(33) - v2).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((g.tail(33) + v2).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((prob.constraints[1].block->value(x).head(32) - l.branch_p).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK(prob.constraints[0].bound(5) == doctest::Approx(1.05 * 1.05));
  CHECK(prob.constraints[0].bound(33 + 5) == doctest::Approx(-0.95 * 0.95));

  const NetworkCase m = load_case_file(oracle::case_path("ieee33_meshed.case"));
  CHECK_THROWS_AS(build_lindistflow_opf(m, default_control_layout(m), scaled_context(m, 1.0), {},
                                        ControlMode::CoordinatedPQ),
                  PowerFlowError);
}

TEST_CASE("surrogate OPF") {
  const Trained& t = trained();
  const OpfRunOptions opt = quick_options();

  SUBCASE("light load needs no control") {
    const Context light = scaled_context(t.c, 0.3);
    const OpfOutcome o = solve_lindistflow_opf(t.c, t.layout, light, ControlMode::CoordinatedPQ, opt);
    CHECK(o.method == "lindistflow");
    CHECK(o.violations_before.voltage == 0);
    CHECK(o.violations_after.voltage == 0);
    CHECK(o.controls.isZero(0.0));
    for (const auto& l : o.solve.state.lambda) CHECK(l.maxCoeff() == 0.0);
    CHECK(o.predicted_before.size() == 0);

    // Same for the surrogate problem once its limits are slack.
    SaddleProblem prob = build_surrogate_opf(t.c, t.layout, light, t.v, t.p, {}, ControlMode::CoordinatedPQ);
    for (auto& c : prob.constraints) c.bound.array() += 100.0;
    const SolveResult r = solve_saddle(prob, opt.solver);
    CHECK(r.converged);
    CHECK(r.state.x.isZero(0.0));
    for (const auto& l : r.state.lambda) CHECK(l.maxCoeff() == 0.0);
  }

  SUBCASE("VVO keeps p at zero and q in the disk") {
    const ViolationContext v = synthesize_violation_context(t.c);
    const OpfOutcome o = solve_vvo(t.c, t.layout, v.context, t.v, t.p, opt);
    CHECK(o.mode == ControlMode::Vvo);
    const auto nd = static_cast<Eigen::Index>(t.layout.device_count());
    CHECK(o.controls.head(nd).isZero(0.0));
    for (Eigen::Index k = 0; k < nd; ++k) CHECK(std::abs(o.controls(nd + k)) <= 0.6);
    CHECK(o.violations_before.voltage == 9);
    CHECK(o.predicted_before.size() == 33);
    CHECK(o.after.converged);
  }

  SUBCASE("cost scaling and the VVO restriction") {
    const ViolationContext v = synthesize_violation_context(t.c);
    OpfRunOptions o1 = opt;
    o1.costs = {0.0, 0.1};
    o1.solver.max_iter = 20000;
    const OpfOutcome pq = solve_coordinated_pq(t.c, t.layout, v.context, t.v, t.p, o1);
    const OpfOutcome vvo = solve_vvo(t.c, t.layout, v.context, t.v, t.p, o1);
    // VVO optimizes over a subset of the coordinated feasible set.
    CHECK(vvo.objective >= pq.objective - 1e-4);

    OpfRunOptions base = opt, doubled = opt;
    base.solver.max_iter = doubled.solver.max_iter = 20000;
    doubled.costs = {0.2, 0.2};
    const OpfOutcome a = solve_coordinated_pq(t.c, t.layout, v.context, t.v, t.p, base);
    const OpfOutcome b = solve_coordinated_pq(t.c, t.layout, v.context, t.v, t.p, doubled);
    CHECK(a.violations_after.voltage == b.violations_after.voltage);
    CHECK(b.violations_after.voltage == 0);
  }

  SUBCASE("model dimensions are checked") {
    CHECK_THROWS_AS(build_surrogate_opf(t.c, t.layout, scaled_context(t.c, 1.0), t.p, t.p, {},
                                        ControlMode::CoordinatedPQ),
                    SolverError);
    CHECK_THROWS_AS(device_objective(t.layout, {-1.0, 0.1}), SolverError);
  }
}

TEST_CASE("MSE comparison") {
  const Trained& t = trained();
  const auto rows = run_mse_comparison(t.c, t.d, t.v, t.p);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].model == "A1");
  CHECK(*rows[0].voltage_mse == 0.0);
  CHECK(rows[1].model == "A2");
  CHECK(rows[1].voltage_mse.has_value());
  CHECK(rows[2].model == "A4");
  CHECK(*rows[2].voltage_mse == doctest::Approx(mean_squared_error(t.v, t.d.features(t.d.split.test),
                                                                   t.d.targets_v(Eigen::all, t.d.split.test)))
                                    .epsilon(1e-12));
  CHECK(run_mse_comparison(t.c, t.d, t.v, t.p, &t.v, &t.p).size() == 4);

  const NetworkCase m = load_case_file(oracle::case_path("ieee33_meshed.case"));
  CHECK_THROWS_AS(run_mse_comparison(m, t.d, t.v, t.p), DatasetError);

  SUBCASE("meshed case has no LinDistFlow row") {
    const LabeledDataset dm = build_dataset(m, sample_scenarios(m, default_control_layout(m), 60, {}, 4));
    fixture::SurrogateTraining cfg;
    cfg.hidden = {4};
    cfg.epochs = 2;
    const IcnnModel mv = fixture::train_surrogate(dm, true, cfg), mp = fixture::train_surrogate(dm, false, cfg);
    const auto mr = run_mse_comparison(m, dm, mv, mp);
    REQUIRE(mr.size() == 3);
    CHECK_FALSE(mr[1].voltage_mse.has_value());
    std::ostringstream out;
    write_mse_table(mr, out);
    CHECK(out.str().find("A2,LinDistFlow,--,--") != std::string::npos);
  }
}

TEST_CASE("report emission") {
  const Trained& t = trained();
  const ViolationContext v = synthesize_violation_context(t.c);
  OpfRunOptions opt = quick_options();
  opt.solver.max_iter = 300;
  opt.solver.record_iterates = true;

  auto build = [&] {
    const OpfOutcome o = solve_coordinated_pq(t.c, t.layout, v.context, t.v, t.p, opt);
    ExperimentReport r;
    r.mse_table = run_mse_comparison(t.c, t.d, t.v, t.p);
    r.before_after = before_after_rows(t.c, o);
    fill_convergence_trace(r, t.c, t.layout, o.solve);
    r.opf_table.push_back(summarize(o));
    r.config_echo = {{"seed", "1"}};
    return std::make_pair(r, o);
  };

  const fs::path root = fs::temp_directory_path() / "icnnopf_report_test";
  fs::remove_all(root);
  const auto [report, outcome] = build();
  REQUIRE(report.before_after.size() == 33);
  for (const auto& row : report.before_after) CHECK(row.oracle == "newton");
  CHECK(report.before_after[17].v_dev_before == outcome.dev_before.v_dev(17));
  CHECK(report.convergence_trace.size() == outcome.solve.trajectory.size());
  CHECK(report.trace_devices.size() == 12);

  emit_report(report, (root / "a").string());
  emit_report(build().first, (root / "b").string());
  for (const char* f : {"mse_table.csv", "before_after.csv", "convergence_trace.csv", "opf_table.csv", "summary.txt"}) {
    const std::string a = slurp(root / "a" / f);
    CHECK_MESSAGE(!a.empty(), f);
    CHECK_MESSAGE(a == slurp(root / "b" / f), f);
  }
  CHECK(line_count(slurp(root / "a" / "before_after.csv")) == 34);
  CHECK(slurp(root / "a" / "before_after.csv").rfind("bus,delta_v,v_dev_before,v_dev_predicted,v_dev_after,oracle\n", 0) == 0);

  ExperimentReport bare = report;
  bare.convergence_trace.clear();
  emit_report(bare, (root / "c").string());
  CHECK(line_count(slurp(root / "c" / "convergence_trace.csv")) == 1);

  std::ostringstream trace;
  write_trace_csv(outcome.solve, trace);
  CHECK(line_count(trace.str()) == static_cast<int>(outcome.solve.history.size()) + 1);
  fs::remove_all(root);
}
