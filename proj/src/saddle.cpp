#include "icnnopf/saddle.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace icnnopf {

double QuadraticObjective::value(const Vector& x) const {
  return 0.5 * x.cwiseProduct(diag).dot(x) + linear.dot(x);
}

Vector QuadraticObjective::gradient(const Vector& x) const { return diag.cwiseProduct(x) + linear; }

namespace {

// Rounding can leave a scaled point an ulp outside the disk.
std::pair<double, double> inside_disk(double p, double q, double s_bar) {
  while (std::hypot(p, q) > s_bar) {
    p = std::nextafter(p, 0.0);
    q = std::nextafter(q, 0.0);
  }
  return {p, q};
}

}  // namespace

std::pair<double, double> project_box_disk(double p, double q, double p_bar, double s_bar) {
  if (!(s_bar > 0.0)) throw SolverError("device capacity s_bar must be positive");
  if (!(p_bar >= 0.0)) throw SolverError("device limit p_bar must be nonnegative");
  const double s2 = s_bar * s_bar;
  if (p >= 0.0 && p <= p_bar && std::hypot(p, q) <= s_bar) return {p, q};

  // Box only: if clamping p lands inside the disk it is the projection.
  const double pc = std::clamp(p, 0.0, p_bar);
  if (std::hypot(pc, q) <= s_bar) return {pc, q};

  // Disk only: radial scaling, accepted when it respects the box.
  const double r = std::hypot(p, q);
  const double pr = p * s_bar / r;
  const double qr = q * s_bar / r;
  if (pr >= 0.0 && pr <= p_bar) return inside_disk(pr, qr, s_bar);

  // Otherwise the nearest point sits on a box face, with |q| limited by the disk.
  const double p_hi = std::min(p_bar, s_bar);
  const double q_lo_face = s_bar;
  const double q_hi_face = std::sqrt(std::max(0.0, s2 - p_hi * p_hi));
  const std::pair<double, double> a{0.0, std::clamp(q, -q_lo_face, q_lo_face)};
  const std::pair<double, double> b{p_hi, std::clamp(q, -q_hi_face, q_hi_face)};
  auto dist2 = [&](const std::pair<double, double>& c) {
    return (c.first - p) * (c.first - p) + (c.second - q) * (c.second - q);
  };
  const auto& best = dist2(a) <= dist2(b) ? a : b;
  return inside_disk(best.first, best.second, s_bar);
}

FeasibleSet FeasibleSet::devices(std::vector<DeviceLimits> limits, ControlMode mode) {
  for (const auto& d : limits) {
    if (!(d.s_max > 0.0) || !(d.p_max >= 0.0)) throw SolverError("invalid device limits");
  }
  FeasibleSet s;
  s.devices_ = std::move(limits);
  s.mode_ = mode;
  return s;
}

FeasibleSet FeasibleSet::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || (lower.array() > upper.array()).any()) {
    throw SolverError("box bounds must satisfy lower <= upper");
  }
  FeasibleSet s;
  s.lower_ = std::move(lower);
  s.upper_ = std::move(upper);
  s.is_box_ = true;
  return s;
}

Eigen::Index FeasibleSet::dim() const {
  return is_box_ ? lower_.size() : static_cast<Eigen::Index>(2 * devices_.size());
}

Vector FeasibleSet::project(const Vector& x) const {
  if (x.size() != dim()) throw SolverError("primal dimension mismatch in projection");
  if (is_box_) return x.cwiseMax(lower_).cwiseMin(upper_);
  Vector out(x.size());
  const auto nd = static_cast<Eigen::Index>(devices_.size());
  for (Eigen::Index k = 0; k < nd; ++k) {
    const auto& d = devices_[static_cast<std::size_t>(k)];
    if (mode_ == ControlMode::Vvo) {
      out(k) = 0.0;
      out(nd + k) = std::clamp(x(nd + k), -d.s_max, d.s_max);
    } else {
      std::tie(out(k), out(nd + k)) = project_box_disk(x(k), x(nd + k), d.p_max, d.s_max);
    }
  }
  return out;
}

double FeasibleSet::violation(const Vector& x) const {
  double v = 0.0;
  if (is_box_) {
    v = std::max((lower_ - x).maxCoeff(), (x - upper_).maxCoeff());
    return std::max(v, 0.0);
  }
  const auto nd = static_cast<Eigen::Index>(devices_.size());
  for (Eigen::Index k = 0; k < nd; ++k) {
    const auto& d = devices_[static_cast<std::size_t>(k)];
    const double p = x(k), q = x(nd + k);
    if (mode_ == ControlMode::Vvo) {
      v = std::max({v, std::abs(p), std::abs(q) - d.s_max});
    } else {
      v = std::max({v, -p, p - d.p_max, std::hypot(p, q) - d.s_max});
    }
  }
  return v;
}

Vector FeasibleSet::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(dim());
  if (is_box_) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = lower_(i) + (upper_(i) - lower_(i)) * u(rng);
    return x;
  }
  const auto nd = static_cast<Eigen::Index>(devices_.size());
  for (Eigen::Index k = 0; k < nd; ++k) {
    const auto& d = devices_[static_cast<std::size_t>(k)];
    x(k) = d.p_max * u(rng);
    x(nd + k) = d.s_max * (2.0 * u(rng) - 1.0);
  }
  return project(x);
}

Vector ConstraintBlock::value(const Vector& x) const {
  Vector v;
  evaluate(x, v, nullptr);
  return v;
}

Matrix ConstraintBlock::jacobian(const Vector& x) const {
  Vector v;
  Matrix j;
  evaluate(x, v, &j);
  return j;
}

void AffineConstraint::evaluate(const Vector& x, Vector& value, Matrix* jacobian) const {
  value = a_ * x + c_;
  if (jacobian) *jacobian = a_;
}

SurrogateConstraint::SurrogateConstraint(IcnnModel model, FeatureMap features, Vector p_u, Vector q_u)
    : model_(std::move(model)), features_(std::move(features)), p_u_(std::move(p_u)), q_u_(std::move(q_u)) {
  if (model_.input_dim() != features_.input_dim()) {
    throw SolverError("surrogate input width does not match the feature map");
  }
}

void SurrogateConstraint::evaluate(const Vector& x, Vector& value, Matrix* jacobian) const {
  const Vector f = features_.features(x, p_u_, q_u_);
  value = predict(model_, f);
  if (jacobian) *jacobian = features_.control_jacobian(predict_jacobian(model_, f));
}

Eigen::Index SaddleProblem::dual_dim() const {
  Eigen::Index n = 0;
  for (const auto& c : constraints) n += c.block->size();
  return n;
}

void SaddleProblem::validate() const {
  const auto n = primal_dim();
  if (objective.diag.size() != n || objective.linear.size() != n) throw SolverError("objective dimension mismatch");
  if ((objective.diag.array() < 0.0).any()) throw SolverError("objective coefficients must be nonnegative");
  for (const auto& c : constraints) {
    if (!c.block) throw SolverError("constraint '" + c.name + "' has no function");
    if (c.bound.size() != c.block->size()) throw SolverError("constraint '" + c.name + "' bound dimension mismatch");
  }
  if (!(primal_reg_scale > 0.0)) throw SolverError("primal regularization scale must be positive");
}

void SolverConfig::validate() const {
  if (!(upsilon > 0.0) || !(epsilon > 0.0)) throw SolverError("regularization upsilon and epsilon must be positive");
  if (mu && !(*mu > 0.0)) throw SolverError("step size must be positive");
  if (max_iter < 0) throw SolverError("max_iter must be nonnegative");
  if (!(stop_tol > 0.0)) throw SolverError("stop_tol must be positive");
  if (lipschitz_samples <= 0) throw SolverError("lipschitz_samples must be positive");
  if (!(safety > 0.0 && safety <= 1.0)) throw SolverError("safety must lie in (0, 1]");
  if (!(lambda_cap > 0.0)) throw SolverError("lambda_cap must be positive");
}

Vector SaddleState::stacked() const {
  Eigen::Index n = x.size();
  for (const auto& l : lambda) n += l.size();
  Vector z(n);
  z.head(x.size()) = x;
  Eigen::Index off = x.size();
  for (const auto& l : lambda) {
    z.segment(off, l.size()) = l;
    off += l.size();
  }
  return z;
}

SaddleState initial_state(const SaddleProblem& prob, const Vector& x0) {
  SaddleState s;
  s.x = project_feasible(prob, x0.size() == 0 ? Vector(Vector::Zero(prob.primal_dim())) : x0);
  for (const auto& c : prob.constraints) s.lambda.push_back(Vector::Zero(c.block->size()));
  return s;
}

namespace {

struct Evaluation {
  std::vector<Vector> g;  // g_j(x) - bound_j
  std::vector<Matrix> jac;
};

Evaluation evaluate_constraints(const SaddleProblem& prob, const Vector& x, bool with_jacobian) {
  Evaluation e;
  e.g.resize(prob.constraints.size());
  if (with_jacobian) e.jac.resize(prob.constraints.size());
  for (std::size_t j = 0; j < prob.constraints.size(); ++j) {
    const auto& c = prob.constraints[j];
    c.block->evaluate(x, e.g[j], with_jacobian ? &e.jac[j] : nullptr);
    e.g[j] -= c.bound;
  }
  return e;
}

LagrangianGradient gradient_from(const SaddleProblem& prob, const SaddleState& s, const SolverConfig& cfg,
                                 const Evaluation& e) {
  LagrangianGradient g;
  g.primal = prob.objective.gradient(s.x) + cfg.upsilon * prob.primal_reg_scale * s.x;
  for (std::size_t j = 0; j < prob.constraints.size(); ++j) {
    g.primal.noalias() += e.jac[j].transpose() * s.lambda[j];
    g.dual.push_back(e.g[j] - cfg.epsilon * s.lambda[j]);
  }
  return g;
}

void check_state(const SaddleProblem& prob, const SaddleState& s) {
  if (s.x.size() != prob.primal_dim() || s.lambda.size() != prob.constraints.size()) {
    throw SolverError("state dimension mismatch");
  }
  for (std::size_t j = 0; j < s.lambda.size(); ++j) {
    if (s.lambda[j].size() != prob.constraints[j].block->size()) throw SolverError("multiplier dimension mismatch");
  }
}

// One projected step; returns the new state.
SaddleState step(const SaddleProblem& prob, const SaddleState& s, const LagrangianGradient& g, double mu) {
  SaddleState next;
  next.x = prob.feasible.project(s.x - mu * g.primal);
  for (std::size_t j = 0; j < s.lambda.size(); ++j) {
    next.lambda.push_back((s.lambda[j] + mu * g.dual[j]).cwiseMax(0.0));
  }
  next.iter = s.iter + 1;
  return next;
}

}  // namespace

double lagrangian_value(const SaddleProblem& prob, const SaddleState& state, const SolverConfig& cfg) {
  check_state(prob, state);
  const Evaluation e = evaluate_constraints(prob, state.x, false);
  double v = prob.objective.value(state.x) + 0.5 * cfg.upsilon * prob.primal_reg_scale * state.x.squaredNorm();
  for (std::size_t j = 0; j < e.g.size(); ++j) {
    v += state.lambda[j].dot(e.g[j]) - 0.5 * cfg.epsilon * state.lambda[j].squaredNorm();
  }
  return v;
}

LagrangianGradient phi_eval(const SaddleProblem& prob, const SaddleState& state, const SolverConfig& cfg) {
  check_state(prob, state);
  return gradient_from(prob, state, cfg, evaluate_constraints(prob, state.x, true));
}

Vector monotone_map(const SaddleProblem& prob, const SaddleState& state, const SolverConfig& cfg) {
  const LagrangianGradient g = phi_eval(prob, state, cfg);
  SaddleState flipped{g.primal, {}, 0};
  for (const auto& d : g.dual) flipped.lambda.push_back(-d);
  return flipped.stacked();
}

Vector project_feasible(const SaddleProblem& prob, const Vector& x) { return prob.feasible.project(x); }

double contraction_factor(double mu, double eta, double lipschitz) {
  return std::sqrt(std::max(0.0, 1.0 - 2.0 * mu * eta + mu * mu * lipschitz * lipschitz));
}

StepSize estimate_step_size(const SaddleProblem& prob, const SolverConfig& cfg) {
  cfg.validate();
  prob.validate();
  StepSize out;
  out.eta = std::min(cfg.upsilon, cfg.epsilon);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, cfg.lambda_cap);
  auto random_state = [&] {
    SaddleState s;
    s.x = prob.feasible.sample(rng);
    for (const auto& c : prob.constraints) {
      Vector l(c.block->size());
      for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = u(rng);
      s.lambda.push_back(std::move(l));
    }
    return s;
  };
  double ratio = 0.0;
  for (int k = 0; k < cfg.lipschitz_samples; ++k) {
    const SaddleState a = random_state();
    const SaddleState b = random_state();
    const double dz = (a.stacked() - b.stacked()).norm();
    if (dz <= 0.0) continue;
    ratio = std::max(ratio, (monotone_map(prob, a, cfg) - monotone_map(prob, b, cfg)).norm() / dz);
  }
  // The monotone map is never flatter than its own regularization.
  out.lipschitz = 2.0 * std::max(ratio, out.eta);
  out.mu = cfg.safety * 2.0 * out.eta / (out.lipschitz * out.lipschitz);
  if (out.mu < 1e-8) {
    std::cerr << "warning: estimated step size " << out.mu << " below 1e-8; clamping\n";
    out.mu = 1e-8;
  }
  return out;
}

SolveResult solve_saddle(const SaddleProblem& prob, const SolverConfig& cfg, const Vector& x0) {
  cfg.validate();
  prob.validate();
  SolveResult res;
  if (cfg.mu) {
    res.step.eta = std::min(cfg.upsilon, cfg.epsilon);
    res.step.mu = *cfg.mu;
  } else {
    res.step = estimate_step_size(prob, cfg);
  }
  res.mu = res.step.mu;

  SaddleState s = initial_state(prob, x0);
  if (cfg.record_iterates) res.trajectory.push_back(s.stacked());
  for (int k = 0; k < cfg.max_iter; ++k) {
    const Evaluation e = evaluate_constraints(prob, s.x, true);
    const LagrangianGradient g = gradient_from(prob, s, cfg, e);
    SaddleState next = step(prob, s, g, res.mu);
    const Vector dz = next.stacked() - s.stacked();
    if (!dz.allFinite()) {
      throw SolverError("non-finite iterate at iteration " + std::to_string(k + 1) + "; step size too large?");
    }

    IterationRecord rec;
    rec.iter = next.iter;
    rec.step_norm = dz.size() ? dz.cwiseAbs().maxCoeff() : 0.0;
    rec.objective = prob.objective.value(next.x);
    rec.primal_infeasibility = prob.feasible.violation(next.x);
    const Evaluation after = evaluate_constraints(prob, next.x, false);
    rec.max_violation = -std::numeric_limits<double>::infinity();
    rec.lambda_max = 0.0;
    rec.lambda_min = 0.0;
    for (std::size_t j = 0; j < after.g.size(); ++j) {
      if (after.g[j].size() == 0) continue;
      rec.max_violation = std::max(rec.max_violation, after.g[j].maxCoeff());
      rec.lambda_max = std::max(rec.lambda_max, next.lambda[j].maxCoeff());
      rec.lambda_min = std::min(rec.lambda_min, next.lambda[j].minCoeff());
    }
    if (after.g.empty()) rec.max_violation = 0.0;
    res.history.push_back(rec);
    if (cfg.record_iterates) res.trajectory.push_back(next.stacked());

    s = std::move(next);
    if (rec.step_norm <= cfg.stop_tol) {
      res.converged = true;
      break;
    }
  }

  const LagrangianGradient g = phi_eval(prob, s, cfg);
  const SaddleState probe = step(prob, s, g, res.mu);
  const Vector r = s.stacked() - probe.stacked();
  res.fixed_point_residual = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
  res.state = std::move(s);
  return res;
}

std::vector<SweepRow> regularization_sweep(const SaddleProblem& prob, const SolverConfig& cfg, int halvings,
                                           const Vector& x0) {
  if (halvings < 1) throw SolverError("halvings must be at least 1");
  std::vector<SweepRow> rows;
  SolverConfig run = cfg;
  for (int h = 0; h <= halvings; ++h) {
    const SolveResult r = solve_saddle(prob, run, x0);
    SweepRow row;
    row.upsilon = run.upsilon;
    row.epsilon = run.epsilon;
    row.objective = prob.objective.value(r.state.x);
    row.max_violation = r.history.empty() ? 0.0 : r.history.back().max_violation;
    row.iterations = r.state.iter;
    row.converged = r.converged;
    row.x = r.state.x;
    rows.push_back(std::move(row));
    run.upsilon *= 0.5;
    run.epsilon *= 0.5;
  }
  return rows;
}

}  // namespace icnnopf
