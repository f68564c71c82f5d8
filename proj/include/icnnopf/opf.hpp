#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icnnopf/dataset.hpp"
#include "icnnopf/saddle.hpp"

namespace icnnopf {

/// Uncontrollable injections (p^u, q^u), full per-bus vectors, generation positive.
struct Context {
  Vector p_u;
  Vector q_u;
};

/// Nominal loads scaled by `load_scale`.
Context scaled_context(const NetworkCase& c, double load_scale);

struct ViolationContext {
  Context context;
  double load_scale = 1.0;
  int violated_buses = 0;
};

/// Raises the load scale from `start` in steps of `step` until the
/// Newton-verified profile with zero control violates the voltage bounds at
/// `min_violations` buses or more. Throws SolverError if `max_scale` is reached.
ViolationContext synthesize_violation_context(const NetworkCase& c, int min_violations = 3, double start = 0.5,
                                              double step = 0.05, double max_scale = 3.0);

/// Quadratic device costs 0.5 d_p p^2 + 0.5 d_q q^2, same for every device.
struct DeviceCosts {
  double d_p = 0.1;
  double d_q = 0.1;
};

QuadraticObjective device_objective(const ControlLayout& layout, const DeviceCosts& costs);

/// Surrogate-constrained OPF: v_dev surrogate <= delta_v and p_dev surrogate
/// <= delta_p at the given context. Regularization scale 2 (augmented inputs).
SaddleProblem build_surrogate_opf(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                  const IcnnModel& model_v, const IcnnModel& model_p, const DeviceCosts& costs,
                                  ControlMode mode);

/// Linearized baseline on radial cases: squared-voltage and flow limits of
/// the LinDistFlow model as affine constraints.
SaddleProblem build_lindistflow_opf(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                    const DeviceCosts& costs, ControlMode mode);

struct ViolationSummary {
  int voltage = 0;  // buses with v_dev > delta_v + allowance
  int flow = 0;
  double worst_voltage_excess = 0.0;  // max(v_dev - delta_v), may be negative
};

ViolationSummary count_violations(const DeviationTargets& t, double allowance);

struct OpfOutcome {
  std::string method;  // "icnn", "mlp", "lindistflow"
  ControlMode mode = ControlMode::CoordinatedPQ;
  Vector controls;
  SolveResult solve;
  double objective = 0.0;
  PowerFlowSolution before;  // Newton, zero control
  PowerFlowSolution after;   // Newton, returned controls
  DeviationTargets dev_before;
  DeviationTargets dev_after;
  Vector predicted_before;   // surrogate v_dev at zero control (empty for lindistflow)
  ViolationSummary violations_before;  // allowance 0
  ViolationSummary violations_after;   // allowance kappa
  double kappa = 0.005;
};

struct OpfRunOptions {
  DeviceCosts costs;
  SolverConfig solver;
  double kappa = 0.005;
  NewtonOptions newton;
};

/// Builds and solves the problem, then verifies the controls with Newton power
/// flow. Throws PowerFlowError if the verification solve does not converge.
OpfOutcome solve_coordinated_pq(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                const IcnnModel& model_v, const IcnnModel& model_p, const OpfRunOptions& opt);
OpfOutcome solve_vvo(const NetworkCase& c, const ControlLayout& layout, const Context& ctx, const IcnnModel& model_v,
                     const IcnnModel& model_p, const OpfRunOptions& opt);
OpfOutcome solve_lindistflow_opf(const NetworkCase& c, const ControlLayout& layout, const Context& ctx,
                                 ControlMode mode, const OpfRunOptions& opt);

struct MseRow {
  std::string model;  // A1..A4
  std::string description;
  std::optional<double> voltage_mse;  // empty: not applicable ("--")
  std::optional<double> flow_mse;
};

/// Test-split MSE of each model's deviation predictions against Newton labels.
/// A2 (LinDistFlow) is not applicable on meshed cases; A3 rows are present
/// only when MLP checkpoints are given.
std::vector<MseRow> run_mse_comparison(const NetworkCase& c, const LabeledDataset& d, const IcnnModel& icnn_v,
                                       const IcnnModel& icnn_p, const IcnnModel* mlp_v = nullptr,
                                       const IcnnModel* mlp_p = nullptr);

std::string_view to_string(ControlMode m);

}  // namespace icnnopf
