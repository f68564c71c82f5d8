#include "icnnopf/opf.hpp"

#include <cmath>

namespace icnnopf {

std::string_view to_string(ControlMode m) { return m == ControlMode::Vvo ? "vvo" : "coordinated-pq"; }

Context scaled_context(const NetworkCase& c, double load_scale) {
  const Injection nominal = nominal_injection(c);
  return Context{load_scale * nominal.p, load_scale * nominal.q};
}

ViolationSummary count_violations(const DeviationTargets& t, double allowance) {
  ViolationSummary s;
  s.worst_voltage_excess = (t.v_dev - t.delta_v).maxCoeff();
  for (Eigen::Index i = 0; i < t.v_dev.size(); ++i) {
    if (t.v_dev(i) > t.delta_v(i) + allowance) ++s.voltage;
  }
  for (Eigen::Index k = 0; k < t.p_dev.size(); ++k) {
    if (t.p_dev(k) > t.delta_p(k) + allowance) ++s.flow;
  }
  return s;
}

ViolationContext synthesize_violation_context(const NetworkCase& c, int min_violations, double start, double step,
                                              double max_scale) {
  if (!(step > 0.0)) throw SolverError("scale step must be positive");
  for (double scale = start; scale <= max_scale + 1e-12; scale += step) {
    const Context ctx = scaled_context(c, scale);
    const PowerFlowSolution sol = newton_power_flow(c, Injection{ctx.p_u, ctx.q_u});
    if (!sol.converged) break;
    const ViolationSummary v = count_violations(deviation_targets(c, sol), 0.0);
    if (v.voltage >= min_violations) return ViolationContext{ctx, scale, v.voltage};
  }
  throw SolverError("no load scale up to " + std::to_string(max_scale) + " produces " +
                    std::to_string(min_violations) + " voltage violations");
}

QuadraticObjective device_objective(const ControlLayout& layout, const DeviceCosts& costs) {
  if (!(costs.d_p >= 0.0) || !(costs.d_q >= 0.0)) throw SolverError("device costs must be nonnegative");
  const auto nd = static_cast<Eigen::Index>(layout.device_count());
  QuadraticObjective h;
  h.diag.resize(2 * nd);
  h.diag << Vector::Constant(nd, costs.d_p), Vector::Constant(nd, costs.d_q);
  h.linear = Vector::Zero(2 * nd);
  return h;
}

SaddleProblem build_surrogate_opf(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                  const IcnnModel& model_v, const IcnnModel& model_p, const DeviceCosts& costs,
                                  ControlMode mode) {
  if (model_v.output_dim() != static_cast<Eigen::Index>(c.bus_count())) {
    throw SolverError("voltage surrogate output does not match bus count");
  }
  if (model_p.output_dim() != static_cast<Eigen::Index>(c.branch_count())) {
    throw SolverError("flow surrogate output does not match branch count");
  }
  const FeatureMap fm(c, layout);
  SaddleProblem prob;
  prob.objective = device_objective(layout, costs);
  prob.feasible = FeasibleSet::devices(layout.limits, mode);
  prob.constraints.push_back(
      {"voltage", std::make_shared<SurrogateConstraint>(model_v, fm, ctx.p_u, ctx.q_u), voltage_half_widths(c)});
  prob.constraints.push_back(
      {"flow", std::make_shared<SurrogateConstraint>(model_p, fm, ctx.p_u, ctx.q_u), flow_half_widths(c)});
  prob.primal_reg_scale = 2.0;
  return prob;
}

SaddleProblem build_lindistflow_opf(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                    const DeviceCosts& costs, ControlMode mode) {
  const LinDistFlowSensitivity s = lindistflow_sensitivity(c);
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  const auto nb = static_cast<Eigen::Index>(c.branch_count());
  const auto nd = static_cast<Eigen::Index>(layout.device_count());

  // Embedding of the controls into per-bus injections.
  Matrix ep = Matrix::Zero(n, 2 * nd), eq = Matrix::Zero(n, 2 * nd);
  for (Eigen::Index k = 0; k < nd; ++k) {
    const auto bus = static_cast<Eigen::Index>(layout.buses[static_cast<std::size_t>(k)]);
    ep(bus, k) = 1.0;
    eq(bus, nd + k) = 1.0;
  }
  const Matrix v2_a = s.v2_per_p * ep + s.v2_per_q * eq;
  const Vector v2_c = s.v2_offset + s.v2_per_p * ctx.p_u + s.v2_per_q * ctx.q_u;
  const Matrix f_a = s.flow_per_p * ep;
  const Vector f_c = s.flow_per_p * ctx.p_u;

  Matrix va(2 * n, 2 * nd);
  va << v2_a, -v2_a;
  Vector vc(2 * n), vb(2 * n);
  vc << v2_c, -v2_c;
  Matrix fa(2 * nb, 2 * nd);
  fa << f_a, -f_a;
  Vector fc(2 * nb), fb(2 * nb);
  fc << f_c, -f_c;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& b = c.buses[static_cast<std::size_t>(i)];
    vb(i) = b.v_max * b.v_max;
    vb(n + i) = -b.v_min * b.v_min;
  }
  for (Eigen::Index k = 0; k < nb; ++k) {
    const auto& br = c.branches[static_cast<std::size_t>(k)];
    fb(k) = br.p_max;
    fb(nb + k) = -br.p_min;
  }

  SaddleProblem prob;
  prob.objective = device_objective(layout, costs);
  prob.feasible = FeasibleSet::devices(layout.limits, mode);
  prob.constraints.push_back({"voltage", std::make_shared<AffineConstraint>(va, vc), vb});
  prob.constraints.push_back({"flow", std::make_shared<AffineConstraint>(fa, fc), fb});
  prob.primal_reg_scale = 1.0;
  return prob;
}

namespace {

OpfOutcome verify(const NetworkCase& c, const ControlLayout& layout, const Context& ctx, const SaddleProblem& prob,
                  const OpfRunOptions& opt, std::string method, ControlMode mode, const IcnnModel* model_v) {
  const FeatureMap fm(c, layout);
  OpfOutcome out;
  out.method = std::move(method);
  out.mode = mode;
  out.kappa = opt.kappa;
  out.solve = solve_saddle(prob, opt.solver);
  out.controls = out.solve.state.x;
  out.objective = prob.objective.value(out.controls);

  const Vector zero = Vector::Zero(layout.dim());
  out.before = newton_power_flow(c, fm.net_injection(zero, ctx.p_u, ctx.q_u), opt.newton);
  out.after = newton_power_flow(c, fm.net_injection(out.controls, ctx.p_u, ctx.q_u), opt.newton);
  if (!out.before.converged || !out.after.converged) {
    throw PowerFlowError("verification power flow did not converge");
  }
  out.dev_before = deviation_targets(c, out.before);
  out.dev_after = deviation_targets(c, out.after);
  if (model_v) out.predicted_before = predict(*model_v, fm.features(zero, ctx.p_u, ctx.q_u));
  out.violations_before = count_violations(out.dev_before, 0.0);
  out.violations_after = count_violations(out.dev_after, opt.kappa);
  return out;
}

}  // namespace

OpfOutcome solve_coordinated_pq(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                const IcnnModel& model_v, const IcnnModel& model_p, const OpfRunOptions& opt) {
  const SaddleProblem prob =
      build_surrogate_opf(c, layout, ctx, model_v, model_p, opt.costs, ControlMode::CoordinatedPQ);
  return verify(c, layout, ctx, prob, opt, model_v.convex_mode ? "icnn" : "mlp", ControlMode::CoordinatedPQ,
                &model_v);
}

OpfOutcome solve_vvo(const NetworkCase& c, const ControlLayout& layout, const Context& ctx, const IcnnModel& model_v,
                     const IcnnModel& model_p, const OpfRunOptions& opt) {
  const SaddleProblem prob = build_surrogate_opf(c, layout, ctx, model_v, model_p, opt.costs, ControlMode::Vvo);
  return verify(c, layout, ctx, prob, opt, model_v.convex_mode ? "icnn" : "mlp", ControlMode::Vvo, &model_v);
}

OpfOutcome solve_lindistflow_opf(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                 ControlMode mode, const OpfRunOptions& opt) {
  const SaddleProblem prob = build_lindistflow_opf(c, layout, ctx, opt.costs, mode);
  return verify(c, layout, ctx, prob, opt, "lindistflow", mode, nullptr);
}

std::vector<MseRow> run_mse_comparison(const NetworkCase& c, const LabeledDataset& d, const IcnnModel& icnn_v,
                                       const IcnnModel& icnn_p, const IcnnModel* mlp_v, const IcnnModel* mlp_p) {
  if (d.case_hash != case_hash(c)) throw DatasetError("dataset/case hash mismatch");
  const auto& rows = d.split.test;
  const Matrix features = d.features(rows);
  const Matrix tv = d.targets_v(Eigen::all, rows);
  const Matrix tp = d.targets_p(Eigen::all, rows);
  auto mse = [](const Matrix& a, const Matrix& b) {
    return a.size() ? (a - b).squaredNorm() / static_cast<double>(a.size()) : 0.0;
  };

  std::vector<MseRow> table;
  table.push_back({"A1", "nonlinear power flow (reference)", 0.0, 0.0});

  MseRow a2{"A2", "LinDistFlow", std::nullopt, std::nullopt};
  if (c.topology == TopologyKind::Radial) {
    const FeatureMap fm = d.feature_map();
    Matrix pv(tv.rows(), tv.cols()), pp(tp.rows(), tp.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = rows[k];
      const Injection inj = fm.net_injection(d.controls(r), d.context_p.col(r), d.context_q.col(r));
      const DeviationTargets t = deviation_targets(c, lindistflow(c, inj));
      pv.col(static_cast<Eigen::Index>(k)) = t.v_dev;
      pp.col(static_cast<Eigen::Index>(k)) = t.p_dev;
    }
    a2.voltage_mse = mse(pv, tv);
    a2.flow_mse = mse(pp, tp);
  }
  table.push_back(a2);

  if (mlp_v && mlp_p) {
    table.push_back({"A3", "neural network (unconstrained weights)", mse(predict_batch(*mlp_v, features), tv),
                     mse(predict_batch(*mlp_p, features), tp)});
  }
  table.push_back({"A4", "input convex neural network", mse(predict_batch(icnn_v, features), tv),
                   mse(predict_batch(icnn_p, features), tp)});
  return table;
}

}  // namespace icnnopf
