#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "icnnopf/dataset.hpp"
#include "icnnopf/icnn.hpp"

namespace icnnopf {

/// h(x) = sum_i 0.5 * diag_i * x_i^2 + linear_i * x_i, diag >= 0.
struct QuadraticObjective {
  Vector diag;
  Vector linear;

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;
};

enum class ControlMode { CoordinatedPQ, Vvo };

/// Euclidean projection of one device setpoint onto
/// {0 <= p <= p_bar} intersected with {p^2 + q^2 <= s_bar^2}.
std::pair<double, double> project_box_disk(double p, double q, double p_bar, double s_bar);

/// Closed convex primal set. Either per-device inverter sets over x = [p; q]
/// (VVO pins p at zero and keeps |q| <= s_bar), or a plain coordinate box.
class FeasibleSet {
 public:
  static FeasibleSet devices(std::vector<DeviceLimits> limits, ControlMode mode);
  static FeasibleSet box(Vector lower, Vector upper);

  Eigen::Index dim() const;
  Vector project(const Vector& x) const;
  /// Largest amount by which x violates the set (0 inside).
  double violation(const Vector& x) const;
  /// A random point of the set.
  Vector sample(std::mt19937_64& rng) const;
  ControlMode mode() const { return mode_; }

 private:
  std::vector<DeviceLimits> devices_;
  ControlMode mode_ = ControlMode::CoordinatedPQ;
  Vector lower_, upper_;
  bool is_box_ = false;
};

/// A vector-valued convex constraint function g(x) with its Jacobian.
class ConstraintBlock {
 public:
  virtual ~ConstraintBlock() = default;
  virtual Eigen::Index size() const = 0;
  virtual void evaluate(const Vector& x, Vector& value, Matrix* jacobian) const = 0;

  Vector value(const Vector& x) const;
  Matrix jacobian(const Vector& x) const;
};

/// g(x) = A x + c.
class AffineConstraint final : public ConstraintBlock {
 public:
  AffineConstraint(Matrix a, Vector c) : a_(std::move(a)), c_(std::move(c)) {}
  Eigen::Index size() const override { return a_.rows(); }
  void evaluate(const Vector& x, Vector& value, Matrix* jacobian) const override;

 private:
  Matrix a_;
  Vector c_;
};

/// Learned surrogate of a deviation vector at a fixed context (p^u, q^u):
/// g(x) = model(features(x, p^u, q^u)), Jacobian by the chain rule through the
/// network, the augmentation and the control embedding.
class SurrogateConstraint final : public ConstraintBlock {
 public:
  SurrogateConstraint(IcnnModel model, FeatureMap features, Vector p_u, Vector q_u);
  Eigen::Index size() const override { return model_.output_dim(); }
  void evaluate(const Vector& x, Vector& value, Matrix* jacobian) const override;

 private:
  IcnnModel model_;
  FeatureMap features_;
  Vector p_u_, q_u_;
};

struct Constraint {
  std::string name;
  std::shared_ptr<const ConstraintBlock> block;
  Vector bound;  // g(x) <= bound
};

/// min_x h(x) s.t. g_j(x) <= bound_j, x in the feasible set; solved through the
/// regularized Lagrangian
///   h(x) + sum_j lambda_j^T (g_j(x) - bound_j) + (upsilon/2) * reg_scale * |x|^2
///        - (epsilon/2) * sum_j |lambda_j|^2.
/// reg_scale = 2 when the surrogates see the augmented vector [x; -x], whose
/// squared norm is 2 |x|^2.
struct SaddleProblem {
  QuadraticObjective objective;
  FeasibleSet feasible = FeasibleSet::box(Vector(), Vector());
  std::vector<Constraint> constraints;
  double primal_reg_scale = 1.0;

  Eigen::Index primal_dim() const { return feasible.dim(); }
  Eigen::Index dual_dim() const;
  void validate() const;
};

struct SolverConfig {
  double upsilon = 1e-3;
  double epsilon = 1e-3;
  std::optional<double> mu;  // empty: estimate from the regularization and a sampled Lipschitz bound
  int max_iter = 20000;
  double stop_tol = 1e-6;
  int lipschitz_samples = 500;
  double safety = 0.5;
  double lambda_cap = 100.0;
  std::uint64_t seed = 7;
  bool record_iterates = false;

  void validate() const;
};

struct SaddleState {
  Vector x;
  std::vector<Vector> lambda;  // one per constraint block, >= 0
  int iter = 0;

  /// z = [x; lambda_1; lambda_2; ...]
  Vector stacked() const;
};

/// Initial state: projected x0 (zero if empty) and zero multipliers.
SaddleState initial_state(const SaddleProblem& prob, const Vector& x0 = Vector());

struct LagrangianGradient {
  Vector primal;              // d L / d x
  std::vector<Vector> dual;   // d L / d lambda_j = g_j(x) - bound_j - epsilon * lambda_j
};

double lagrangian_value(const SaddleProblem& prob, const SaddleState& state, const SolverConfig& cfg);
LagrangianGradient phi_eval(const SaddleProblem& prob, const SaddleState& state, const SolverConfig& cfg);

/// Monotone operator [dL/dx; -dL/dlambda] stacked like SaddleState::stacked().
Vector monotone_map(const SaddleProblem& prob, const SaddleState& state, const SolverConfig& cfg);

Vector project_feasible(const SaddleProblem& prob, const Vector& x);

/// sqrt(1 - 2 mu eta + mu^2 L^2)
double contraction_factor(double mu, double eta, double lipschitz);

struct StepSize {
  double mu = 0.0;
  double eta = 0.0;        // min(upsilon, epsilon)
  double lipschitz = 0.0;  // sampled bound, already inflated 2x
};

/// mu = safety * 2 eta / L^2 with L the inflated sampled Lipschitz constant of
/// the monotone map over the feasible set times [0, lambda_cap]^m.
StepSize estimate_step_size(const SaddleProblem& prob, const SolverConfig& cfg);

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;      // h(x)
  double max_violation = 0.0;  // max_j max_i (g_j(x) - bound_j)_i
  double step_norm = 0.0;      // |z^{k+1} - z^k|_inf
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double primal_infeasibility = 0.0;
};

struct SolveResult {
  SaddleState state;
  std::vector<IterationRecord> history;
  std::vector<Vector> trajectory;  // stacked z per iterate (z^0 first), when requested
  bool converged = false;
  double mu = 0.0;
  StepSize step;
  double fixed_point_residual = 0.0;
};

/// Projected primal-descent / dual-ascent iteration with a constant step.
/// Stops when |z^{k+1} - z^k|_inf <= stop_tol or after max_iter steps; the
/// latter returns converged = false. Throws SolverError on a non-finite iterate.
SolveResult solve_saddle(const SaddleProblem& prob, const SolverConfig& cfg, const Vector& x0 = Vector());

struct SweepRow {
  double upsilon = 0.0;
  double epsilon = 0.0;
  double objective = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  bool converged = false;
  Vector x;
};

/// Solves at (upsilon, epsilon) and at `halvings` successive halvings of both.
std::vector<SweepRow> regularization_sweep(const SaddleProblem& prob, const SolverConfig& cfg, int halvings,
                                           const Vector& x0 = Vector());

}  // namespace icnnopf
