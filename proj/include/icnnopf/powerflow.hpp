#pragma once

#include "icnnopf/network.hpp"

namespace icnnopf {

/// Net per-bus injections, generation positive. Slack entries are ignored.
struct Injection {
  Vector p;
  Vector q;
};

/// Net injection implied by the case's nominal loads (p = -p_load).
Injection nominal_injection(const NetworkCase& c);

struct PowerFlowSolution {
  Vector v_mag;
  Vector v_ang;     // rad
  Vector branch_p;  // sending-end (from-bus) real power
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
  bool singular_jacobian = false;
};

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 50;
};

/// Polar Newton-Raphson on the bus power-balance equations from a flat start.
/// Works on radial and meshed cases. Non-convergence and a singular Jacobian
/// are reported through the solution, not thrown.
PowerFlowSolution newton_power_flow(const NetworkCase& c, const Injection& inj, const NewtonOptions& opt = {});

/// Lossless linearized DistFlow. Throws PowerFlowError on meshed cases.
PowerFlowSolution lindistflow(const NetworkCase& c, const Injection& inj);

/// Affine map from the squared-voltage LinDistFlow model:
///   v^2 = v2_offset + v2_per_p * p + v2_per_q * q,
///   branch_p = flow_offset + flow_per_p * p
/// over full per-bus injection vectors (slack columns are zero).
struct LinDistFlowSensitivity {
  Vector v2_offset;
  Matrix v2_per_p;
  Matrix v2_per_q;
  Matrix flow_per_p;
};

LinDistFlowSensitivity lindistflow_sensitivity(const NetworkCase& c);

/// |quantity - midpoint of its bounds| for every bus and branch, plus the half
/// bound widths. A bound holds iff the deviation is at most the half width.
struct DeviationTargets {
  Vector v_dev;
  Vector p_dev;
  Vector delta_v;
  Vector delta_p;
};

DeviationTargets deviation_targets(const NetworkCase& c, const PowerFlowSolution& sol);

Vector voltage_half_widths(const NetworkCase& c);
Vector flow_half_widths(const NetworkCase& c);

}  // namespace icnnopf
