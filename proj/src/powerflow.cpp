#include "icnnopf/powerflow.hpp"

#include <cmath>
#include <complex>
#include <queue>

namespace icnnopf {

namespace {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

void check_injection(const NetworkCase& c, const Injection& inj) {
  if (static_cast<std::size_t>(inj.p.size()) != c.bus_count() ||
      static_cast<std::size_t>(inj.q.size()) != c.bus_count()) {
    throw PowerFlowError("injection dimension does not match bus count");
  }
}

CMatrix admittance(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  CMatrix y = CMatrix::Zero(n, n);
  for (const auto& br : c.branches) {
    const auto f = static_cast<Eigen::Index>(*c.index_of(br.from_bus));
    const auto t = static_cast<Eigen::Index>(*c.index_of(br.to_bus));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    y(f, f) += ys;
    y(t, t) += ys;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  return y;
}

Vector sending_end_flows(const NetworkCase& c, const CVector& v) {
  Vector flows(static_cast<Eigen::Index>(c.branch_count()));
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    const auto& br = c.branches[k];
    const auto f = static_cast<Eigen::Index>(*c.index_of(br.from_bus));
    const auto t = static_cast<Eigen::Index>(*c.index_of(br.to_bus));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    flows(static_cast<Eigen::Index>(k)) = (v(f) * std::conj(ys * (v(f) - v(t)))).real();
  }
  return flows;
}

// Parent pointers of the spanning tree rooted at the slack bus.
struct RadialTree {
  std::vector<std::ptrdiff_t> parent;         // bus -> parent bus (-1 at root)
  std::vector<std::ptrdiff_t> parent_branch;  // bus -> branch to parent
  std::vector<std::size_t> order;             // BFS order from the root
};

RadialTree build_tree(const NetworkCase& c) {
  const std::size_t n = c.bus_count();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    const auto f = *c.index_of(c.branches[k].from_bus);
    const auto t = *c.index_of(c.branches[k].to_bus);
    adj[f].push_back({t, k});
    adj[t].push_back({f, k});
  }
  RadialTree tree{std::vector<std::ptrdiff_t>(n, -1), std::vector<std::ptrdiff_t>(n, -1), {}};
  std::vector<bool> seen(n, false);
  const auto root = c.slack_index();
  std::queue<std::size_t> q;
  q.push(root);
  seen[root] = true;
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    tree.order.push_back(u);
    for (auto [w, k] : adj[u]) {
      if (seen[w]) continue;
      seen[w] = true;
      tree.parent[w] = static_cast<std::ptrdiff_t>(u);
      tree.parent_branch[w] = static_cast<std::ptrdiff_t>(k);
      q.push(w);
    }
  }
  return tree;
}

}  // namespace

Injection nominal_injection(const NetworkCase& c) {
  Injection inj{Vector::Zero(static_cast<Eigen::Index>(c.bus_count())),
                Vector::Zero(static_cast<Eigen::Index>(c.bus_count()))};
  for (std::size_t i = 0; i < c.bus_count(); ++i) {
    if (c.buses[i].kind == BusKind::Slack) continue;
    inj.p(static_cast<Eigen::Index>(i)) = -c.buses[i].p_load;
    inj.q(static_cast<Eigen::Index>(i)) = -c.buses[i].q_load;
  }
  return inj;
}

PowerFlowSolution newton_power_flow(const NetworkCase& c, const Injection& inj, const NewtonOptions& opt) {
  check_injection(c, inj);
  if (!(opt.tol > 0.0)) throw PowerFlowError("tolerance must be positive");

  const auto n = static_cast<Eigen::Index>(c.bus_count());
  const auto slack = static_cast<Eigen::Index>(c.slack_index());
  const CMatrix y = admittance(c);

  // Unknown ordering: angles then magnitudes of every non-slack bus.
  std::vector<Eigen::Index> pq;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i != slack) pq.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(pq.size());

  Vector vm = Vector::Ones(n);
  Vector va = Vector::Zero(n);
  vm(slack) = c.v_slack;
  CVector s_spec(n);
  for (Eigen::Index i = 0; i < n; ++i) s_spec(i) = Complex(inj.p(i), inj.q(i));

  auto phasors = [&] {
    CVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(vm(i), va(i));
    return v;
  };

  PowerFlowSolution sol;
  CVector v = phasors();
  Vector mis(2 * m);
  auto evaluate_mismatch = [&] {
    const CVector s_calc = v.cwiseProduct((y * v).conjugate());
    for (Eigen::Index k = 0; k < m; ++k) {
      const Complex d = s_spec(pq[k]) - s_calc(pq[k]);
      mis(k) = d.real();
      mis(m + k) = d.imag();
    }
    return m == 0 ? 0.0 : mis.cwiseAbs().maxCoeff();
  };

  double norm = evaluate_mismatch();
  int iter = 0;
  while (norm > opt.tol && iter < opt.max_iter) {
    // Complex power derivatives with respect to angle and magnitude.
    const CVector ibus = y * v;
    CVector v_unit(n);
    for (Eigen::Index i = 0; i < n; ++i) v_unit(i) = v(i) / std::abs(v(i));
    const CMatrix dS_dVa = Complex(0.0, 1.0) * v.asDiagonal() *
                           (CMatrix(ibus.asDiagonal()) - y * v.asDiagonal()).conjugate();
    const CMatrix dS_dVm = v.asDiagonal() * (y * v_unit.asDiagonal()).conjugate() +
                           CMatrix(ibus.conjugate().asDiagonal()) * v_unit.asDiagonal();

    Matrix jac(2 * m, 2 * m);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index k = 0; k < m; ++k) {
        const Complex a = dS_dVa(pq[r], pq[k]);
        const Complex b = dS_dVm(pq[r], pq[k]);
        jac(r, k) = a.real();
        jac(r, m + k) = b.real();
        jac(m + r, k) = a.imag();
        jac(m + r, m + k) = b.imag();
      }
    }
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!lu.isInvertible()) {
      sol.singular_jacobian = true;
      break;
    }
    const Vector dx = lu.solve(mis);
    for (Eigen::Index k = 0; k < m; ++k) {
      va(pq[k]) += dx(k);
      vm(pq[k]) += dx(m + k);
    }
    v = phasors();
    norm = evaluate_mismatch();
    ++iter;
    if (!std::isfinite(norm)) break;
  }

  sol.v_mag = vm;
  sol.v_ang = va;
  sol.iterations = iter;
  sol.max_mismatch = norm;
  sol.converged = std::isfinite(norm) && norm <= opt.tol;
  sol.branch_p = sending_end_flows(c, v);
  return sol;
}

LinDistFlowSensitivity lindistflow_sensitivity(const NetworkCase& c) {
  if (classify_topology(c) != TopologyKind::Radial) {
    throw PowerFlowError("LinDistFlow requires radial topology");
  }
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  const auto nb = static_cast<Eigen::Index>(c.branch_count());
  const RadialTree tree = build_tree(c);

  // path[i]: branches between bus i and the root.
  std::vector<std::vector<std::size_t>> path(c.bus_count());
  for (auto u : tree.order) {
    if (tree.parent[u] < 0) continue;
    path[u] = path[static_cast<std::size_t>(tree.parent[u])];
    path[u].push_back(static_cast<std::size_t>(tree.parent_branch[u]));
  }

  LinDistFlowSensitivity s;
  s.v2_offset = Vector::Constant(n, c.v_slack * c.v_slack);
  s.v2_per_p = Matrix::Zero(n, n);
  s.v2_per_q = Matrix::Zero(n, n);
  s.flow_per_p = Matrix::Zero(nb, n);

  // Flow on a branch equals minus the injections downstream of it, so
  // d(v_i^2)/d(p_j) = 2 * sum of r over branches shared by both root paths.
  std::vector<std::size_t> branch_child(c.branch_count());
  for (auto u : tree.order) {
    if (tree.parent[u] >= 0) branch_child[static_cast<std::size_t>(tree.parent_branch[u])] = u;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    for (auto k : path[static_cast<std::size_t>(j)]) {
      // Positive when the branch is written parent -> child.
      const double sign = (*c.index_of(c.branches[k].to_bus) == branch_child[k]) ? 1.0 : -1.0;
      s.flow_per_p(static_cast<Eigen::Index>(k), j) = -sign;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& pi = path[static_cast<std::size_t>(i)];
      const auto& pj = path[static_cast<std::size_t>(j)];
      double rr = 0.0, xx = 0.0;
      // Root paths share a common prefix.
      for (std::size_t k = 0; k < std::min(pi.size(), pj.size()) && pi[k] == pj[k]; ++k) {
        rr += c.branches[pi[k]].r;
        xx += c.branches[pi[k]].x;
      }
      s.v2_per_p(i, j) = 2.0 * rr;
      s.v2_per_q(i, j) = 2.0 * xx;
    }
  }
  const auto slack = static_cast<Eigen::Index>(c.slack_index());
  s.v2_per_p.col(slack).setZero();
  s.v2_per_q.col(slack).setZero();
  s.flow_per_p.col(slack).setZero();
  return s;
}

PowerFlowSolution lindistflow(const NetworkCase& c, const Injection& inj) {
  check_injection(c, inj);
  const auto s = lindistflow_sensitivity(c);
  const Vector v2 = s.v2_offset + s.v2_per_p * inj.p + s.v2_per_q * inj.q;
  PowerFlowSolution sol;
  sol.v_mag = v2.cwiseMax(0.0).cwiseSqrt();
  sol.v_ang = Vector::Zero(v2.size());
  sol.branch_p = s.flow_per_p * inj.p;
  sol.converged = true;
  sol.iterations = 0;
  sol.max_mismatch = 0.0;
  return sol;
}

Vector voltage_half_widths(const NetworkCase& c) {
  Vector d(static_cast<Eigen::Index>(c.bus_count()));
  for (std::size_t i = 0; i < c.bus_count(); ++i) {
    d(static_cast<Eigen::Index>(i)) = 0.5 * (c.buses[i].v_max - c.buses[i].v_min);
  }
  return d;
}

Vector flow_half_widths(const NetworkCase& c) {
  Vector d(static_cast<Eigen::Index>(c.branch_count()));
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    d(static_cast<Eigen::Index>(k)) = 0.5 * (c.branches[k].p_max - c.branches[k].p_min);
  }
  return d;
}

DeviationTargets deviation_targets(const NetworkCase& c, const PowerFlowSolution& sol) {
  if (!sol.converged) throw PowerFlowError("deviation targets require a converged power flow");
  DeviationTargets t;
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  const auto nb = static_cast<Eigen::Index>(c.branch_count());
  if (sol.v_mag.size() != n || sol.branch_p.size() != nb) {
    throw PowerFlowError("solution dimension does not match case");
  }
  t.v_dev.resize(n);
  t.p_dev.resize(nb);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& b = c.buses[static_cast<std::size_t>(i)];
    t.v_dev(i) = std::abs(sol.v_mag(i) - 0.5 * (b.v_min + b.v_max));
  }
  for (Eigen::Index k = 0; k < nb; ++k) {
    const auto& br = c.branches[static_cast<std::size_t>(k)];
    t.p_dev(k) = std::abs(sol.branch_p(k) - 0.5 * (br.p_min + br.p_max));
  }
  t.delta_v = voltage_half_widths(c);
  t.delta_p = flow_half_widths(c);
  return t;
}

}  // namespace icnnopf
