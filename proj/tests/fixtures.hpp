#pragma once

#include <random>

#include "icnnopf/dataset.hpp"
#include "icnnopf/icnn.hpp"
#include "icnnopf/saddle.hpp"

namespace fixture {

using icnnopf::IcnnModel;
using icnnopf::Matrix;
using icnnopf::Vector;

inline Vector uniform_vector(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (auto& e : v) e = u(rng);
  return v;
}

// Fresh model with nonzero biases so every layer is exercised.
inline IcnnModel random_model(std::uint64_t seed, std::vector<int> widths, bool convex = true, double beta = 5.0,
                              bool augmented = false) {
  IcnnModel m = icnnopf::make_model(widths, beta, convex, augmented, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& b : m.b) b = uniform_vector(rng, b.size(), -0.5, 0.5);
  return m;
}

// Small model trained for a few epochs on a convex quadratic target.
inline IcnnModel trained_model(std::uint64_t seed, int width, int inputs = 4, int outputs = 2, bool convex = true) {
  std::mt19937_64 rng(seed);
  const int n = 256;
  Matrix x(inputs, n), y(outputs, n);
  const Matrix a = Matrix::NullaryExpr(outputs, inputs, [&] { return std::uniform_real_distribution<>(-1, 1)(rng); });
  for (int k = 0; k < n; ++k) {
    x.col(k) = uniform_vector(rng, inputs);
    y.col(k) = (a * x.col(k)).array().square().matrix() + 0.1 * a * x.col(k);
  }
  IcnnModel m = icnnopf::make_model({inputs, width, width, outputs}, 5.0, convex, false, seed);
  m.norm = icnnopf::compute_norm_stats(x, y);
  icnnopf::TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = seed;
  icnnopf::train_model(m, x, y, cfg);
  return m;
}

// min x^2 s.t. 1 - x <= 0 on the box [-10, 10].
inline icnnopf::SaddleProblem one_d_problem() {
  icnnopf::SaddleProblem p;
  p.objective.diag = Vector::Constant(1, 2.0);
  p.objective.linear = Vector::Zero(1);
  p.feasible = icnnopf::FeasibleSet::box(Vector::Constant(1, -10.0), Vector::Constant(1, 10.0));
  p.constraints.push_back(
      {"x>=1", std::make_shared<icnnopf::AffineConstraint>(Matrix::Constant(1, 1, -1.0), Vector::Ones(1)),
       Vector::Zero(1)});
  return p;
}

// Regularized saddle of the 1-D problem: x = 1 / (1 + eps (2 + ups)), lambda = (2 + ups) x.
inline Vector one_d_saddle(double ups, double eps) {
  const double x = 1.0 / (1.0 + eps * (2.0 + ups));
  Vector z(2);
  z << x, (2.0 + ups) * x;
  return z;
}

// Exact Lipschitz constant of the 1-D monotone map z -> [[2+ups, -1], [1, eps]] z + const.
inline double one_d_lipschitz(double ups, double eps) {
  Eigen::Matrix2d a;
  a << 2.0 + ups, -1.0, 1.0, eps;
  return Eigen::JacobiSVD<Eigen::Matrix2d>(a).singularValues()(0);
}

// min 0.5 x'Dx + c'x s.t. a'x <= b over a box wide enough never to bind.
struct QpInstance {
  icnnopf::SaddleProblem problem;
  Matrix d;
  Vector c, a;
  double b = 0.0;

  // Regularized saddle in closed form (single affine constraint).
  Vector saddle(double ups, double eps) const {
    const Matrix m = (d + ups * Matrix::Identity(d.rows(), d.cols())).inverse();
    double lambda = -(a.dot(m * c) + b) / (eps + a.dot(m * a));
    lambda = std::max(lambda, 0.0);
    Vector z(c.size() + 1);
    z << -m * (c + lambda * a), lambda;
    return z;
  }
};

inline QpInstance random_qp(std::uint64_t seed, int n = 2) {
  std::mt19937_64 rng(seed);
  QpInstance q;
  q.d = uniform_vector(rng, n, 0.5, 3.0).asDiagonal();
  q.c = uniform_vector(rng, n, -2.0, 2.0);
  q.a = uniform_vector(rng, n, -1.0, 1.0);
  q.b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  q.problem.objective.diag = q.d.diagonal();
  q.problem.objective.linear = q.c;
  q.problem.feasible = icnnopf::FeasibleSet::box(Vector::Constant(n, -100.0), Vector::Constant(n, 100.0));
  q.problem.constraints.push_back(
      {"a'x<=b", std::make_shared<icnnopf::AffineConstraint>(q.a.transpose(), Vector::Zero(1)),
       Vector::Constant(1, q.b)});
  return q;
}

struct SurrogateTraining {
  std::vector<int> hidden{64, 64};
  int epochs = 100;
  double learning_rate = 0.1;
  int batch_size = 16;
  bool convex = true;
  std::uint64_t seed = 1;
};

// Voltage (true) or flow surrogate trained on the train split, as the CLI does.
inline IcnnModel train_surrogate(const icnnopf::LabeledDataset& d, bool voltage, const SurrogateTraining& t) {
  const Matrix& all = voltage ? d.targets_v : d.targets_p;
  const Matrix x_train = d.features(d.split.train);
  const Matrix y_train = all(Eigen::all, d.split.train);
  std::vector<int> widths{static_cast<int>(x_train.rows())};
  widths.insert(widths.end(), t.hidden.begin(), t.hidden.end());
  widths.push_back(static_cast<int>(y_train.rows()));
  IcnnModel m = icnnopf::make_model(widths, 5.0, t.convex, true, t.seed);
  m.norm = voltage ? d.norm_v : d.norm_p;
  icnnopf::TrainConfig cfg;
  cfg.epochs = t.epochs;
  cfg.learning_rate = t.learning_rate;
  cfg.batch_size = t.batch_size;
  cfg.seed = t.seed;
  icnnopf::train_model(m, x_train, y_train, cfg);
  return m;
}

}  // namespace fixture
