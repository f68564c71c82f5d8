#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "icnnopf/types.hpp"

namespace icnnopf {

/// Affine input/output normalization. Network inputs are (raw - in_shift) / in_scale
/// and raw outputs are network outputs times out_scale. Positive scales keep a
/// convex network convex in raw coordinates.
struct NormStats {
  Vector in_shift;
  Vector in_scale;
  Vector out_scale;

  bool operator==(const NormStats& o) const {
    return in_shift == o.in_shift && in_scale == o.in_scale && out_scale == o.out_scale;
  }
};

/// Input convex neural network with Softplus hidden activations:
///
///   y_1     = softplus(W_x[0] x + b[0])
///   y_{i+1} = softplus(W_y[i-1] y_i + W_x[i] x + b[i]),  i = 1..m-1
///   out     = W_y[m-1] y_m + W_x[m] x + b[m]
///
/// where m = number of hidden layers. `w_y[i]` is the weight feeding layer i+1's
/// hidden state into layer i+2 (or the output); there is no W_y for the first
/// layer. With `convex_mode` every W_y entry is nonnegative and every output is
/// convex in x. With `convex_mode == false` the same structure is a plain MLP
/// with input skip connections.
struct IcnnModel {
  std::vector<int> layer_widths;  // input, hidden..., output
  std::vector<Matrix> w_y;
  std::vector<Matrix> w_x;
  std::vector<Vector> b;
  double beta = 5.0;
  bool convex_mode = true;
  bool augmented = false;
  NormStats norm;

  std::size_t hidden_layers() const { return layer_widths.size() - 2; }
  Eigen::Index input_dim() const { return layer_widths.front(); }
  Eigen::Index output_dim() const { return layer_widths.back(); }
  std::size_t parameter_count() const;

  /// Throws ModelError if shapes, beta, scales or the convexity invariant are off.
  void validate() const;

  bool operator==(const IcnnModel& o) const {
    return layer_widths == o.layer_widths && w_y == o.w_y && w_x == o.w_x && b == o.b && beta == o.beta &&
           convex_mode == o.convex_mode && augmented == o.augmented && norm == o.norm;
  }
};

/// Gradient with the same layout as the model parameters.
struct ModelGrads {
  std::vector<Matrix> w_y;
  std::vector<Matrix> w_x;
  std::vector<Vector> b;
  double loss = 0.0;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  int epochs = 200;
  int batch_size = 64;
  std::uint64_t seed = 1;
  double validation_fraction = 0.1;

  void validate() const;
};

double softplus(double t, double beta);
double softplus_grad(double t, double beta);

/// Fresh model. W_y ~ U[0, s] in convex mode (U[-s, s] otherwise), W_x ~ U[-s, s],
/// biases zero, s = 1/sqrt(fan_in). Normalization starts as the identity.
IcnnModel make_model(const std::vector<int>& layer_widths, double beta, bool convex_mode, bool augmented,
                     std::uint64_t seed);

/// Forward pass in normalized coordinates.
Vector icnn_forward(const IcnnModel& model, const Vector& x);
/// Batched forward pass; one sample per column.
Matrix icnn_forward_batch(const IcnnModel& model, const Matrix& x);

/// d(output)/d(x) in normalized coordinates, by forward accumulation of the
/// layer Jacobians.
Matrix icnn_input_jacobian(const IcnnModel& model, const Vector& x);

/// Gradient of the batch mean squared error (mean over samples and outputs)
/// with respect to every parameter. Inputs and targets are normalized; one
/// sample per column.
ModelGrads icnn_param_grads(const IcnnModel& model, const Matrix& inputs, const Matrix& targets);

/// Gradient step followed, in convex mode, by clamping every W_y entry at zero.
void apply_gradient(IcnnModel& model, const ModelGrads& grads, double learning_rate);

struct StepResult {
  IcnnModel model;
  double loss = 0.0;
};

/// One projected gradient step on a normalized batch. Throws ModelError on a
/// non-finite loss.
StepResult train_step(const IcnnModel& model, const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg);

/// [x; -x]
Vector augment_input(const Vector& x_tilde);
/// Chain rule through augment_input: J[:, :d] - J[:, d:].
Matrix reduce_augmented_jacobian(const Matrix& jac);

/// Model on [x; -x] reproducing `plain` exactly; the -x half gets zero weights.
IcnnModel embed_plain_in_augmented(const IcnnModel& plain);

// --- raw-coordinate wrappers -------------------------------------------------

Vector predict(const IcnnModel& model, const Vector& raw_x);
Matrix predict_batch(const IcnnModel& model, const Matrix& raw_x);
/// d(raw output)/d(raw input).
Matrix predict_jacobian(const IcnnModel& model, const Vector& raw_x);

/// Per-feature mean/std of the inputs and per-target max |t|. Zero spreads map to 1.
NormStats compute_norm_stats(const Matrix& raw_inputs, const Matrix& raw_targets);

struct TrainHistory {
  std::vector<double> train_loss;  // normalized MSE per epoch (mean of batch losses)
  std::vector<double> val_loss;    // normalized MSE on the validation set, if given
};

/// Mini-batch projected gradient descent with seeded shuffling. The model's
/// normalization statistics are applied to the raw data; call
/// compute_norm_stats beforehand to set them.
TrainHistory train_model(IcnnModel& model, const Matrix& raw_inputs, const Matrix& raw_targets,
                         const TrainConfig& cfg, const Matrix* raw_val_inputs = nullptr,
                         const Matrix* raw_val_targets = nullptr);

/// Mean squared error of raw predictions against raw targets over all entries.
double mean_squared_error(const IcnnModel& model, const Matrix& raw_inputs, const Matrix& raw_targets);

std::string save_model(const IcnnModel& model);
IcnnModel load_model(std::string_view document);
void save_model_file(const IcnnModel& model, const std::string& path);
IcnnModel load_model_file(const std::string& path);

}  // namespace icnnopf
