#pragma once

// Independent reference computations used only by the tests.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "icnnopf/network.hpp"
#include "icnnopf/powerflow.hpp"

namespace oracle {

using icnnopf::Matrix;
using icnnopf::Vector;
using cplx = std::complex<double>;

inline std::string case_path(const std::string& name) { return std::string(ICNNOPF_DATA_DIR) + "/" + name; }

inline std::string two_bus_document(double r = 0.01, double x = 0.01, double p = 1.0, double q = 0.5) {
  return "[header]\ns_base_kva 100\nv_base_kv 4.16\nper_unit true\n"
         "[buses]\n1 slack 0 0 0.95 1.05 0\n2 load " +
         std::to_string(p) + " " + std::to_string(q) + " 0.95 1.05 1\n[branches]\n1 2 " + std::to_string(r) + " " +
         std::to_string(x) + "\n";
}

struct SweepResult {
  Vector v_mag;
  Vector branch_p;
  int iterations = 0;
  bool converged = false;
};

// Backward/forward sweep on a radial feeder, iterated until the voltage
// update is below tol. Constant-power injections, generation positive.
inline SweepResult backward_forward_sweep(const icnnopf::NetworkCase& c, const icnnopf::Injection& inj,
                                          double tol = 1e-12, int max_iter = 1000) {
  const std::size_t n = c.bus_count();
  const std::size_t slack = c.slack_index();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);  // (neighbor, branch)
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    const auto a = *c.index_of(c.branches[k].from_bus), b = *c.index_of(c.branches[k].to_bus);
    adj[a].push_back({b, k});
    adj[b].push_back({a, k});
  }
  std::vector<std::size_t> order{slack}, parent(n, n), up_branch(n, 0);
  std::vector<bool> seen(n, false);
  seen[slack] = true;
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (auto [nb, k] : adj[order[head]]) {
      if (seen[nb]) continue;
      seen[nb] = true;
      parent[nb] = order[head];
      up_branch[nb] = k;
      order.push_back(nb);
    }
  }

  std::vector<cplx> v(n, cplx(c.v_slack, 0.0)), i_branch(n);
  SweepResult out;
  for (int it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const cplx s_load(-inj.p(static_cast<Eigen::Index>(i)), -inj.q(static_cast<Eigen::Index>(i)));
      i_branch[i] = i == slack ? cplx() : std::conj(s_load / v[i]);
    }
    for (std::size_t k = order.size(); k-- > 1;) {
      const auto b = order[k];
      if (parent[b] != slack) i_branch[parent[b]] += i_branch[b];
    }
    double change = 0.0;
    for (std::size_t k = 1; k < order.size(); ++k) {
      const auto b = order[k];
      const auto& br = c.branches[up_branch[b]];
      const cplx next = v[parent[b]] - cplx(br.r, br.x) * i_branch[b];
      change = std::max(change, std::abs(next - v[b]));
      v[b] = next;
    }
    out.iterations = it;
    if (change < tol) {
      out.converged = true;
      break;
    }
  }
  // Recompute currents at the final voltages for the flows.
  for (std::size_t i = 0; i < n; ++i) {
    const cplx s_load(-inj.p(static_cast<Eigen::Index>(i)), -inj.q(static_cast<Eigen::Index>(i)));
    i_branch[i] = i == slack ? cplx() : std::conj(s_load / v[i]);
  }
  for (std::size_t k = order.size(); k-- > 1;) {
    const auto b = order[k];
    if (parent[b] != slack) i_branch[parent[b]] += i_branch[b];
  }
  out.v_mag.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out.v_mag(static_cast<Eigen::Index>(i)) = std::abs(v[i]);
  out.branch_p.resize(static_cast<Eigen::Index>(c.branch_count()));
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto b = order[k];
    const auto kk = up_branch[b];
    const bool parent_sends = *c.index_of(c.branches[kk].from_bus) == parent[b];
    const double p = parent_sends ? std::real(v[parent[b]] * std::conj(i_branch[b]))
                                  : std::real(v[b] * std::conj(-i_branch[b]));
    out.branch_p(static_cast<Eigen::Index>(kk)) = p;
  }
  return out;
}

// Central differences of a vector function, one column per input.
inline Matrix central_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

// max |a - b| / max |b|
inline double max_rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

// Nearest point of {0 <= p <= p_bar, p^2 + q^2 <= s_bar^2} over a square grid.
inline std::pair<double, double> grid_projection(double p, double q, double p_bar, double s_bar, double step) {
  double best = std::numeric_limits<double>::infinity();
  std::pair<double, double> arg{0.0, 0.0};
  const int np = static_cast<int>(std::floor(p_bar / step));
  const int nq = static_cast<int>(std::floor(s_bar / step));
  for (int i = 0; i <= np; ++i) {
    const double pp = i * step;
    for (int j = -nq; j <= nq; ++j) {
      const double qq = j * step;
      if (pp * pp + qq * qq > s_bar * s_bar) continue;
      const double d = (pp - p) * (pp - p) + (qq - q) * (qq - q);
      if (d < best) {
        best = d;
        arg = {pp, qq};
      }
    }
  }
  return arg;
}

}  // namespace oracle
