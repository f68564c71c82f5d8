#include "icnnopf/icnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace icnnopf {

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

void check_input(const IcnnModel& model, Eigen::Index rows) {
  if (rows != model.input_dim()) {
    throw ModelError("input dimension " + std::to_string(rows) + " does not match model input " +
                     std::to_string(model.input_dim()));
  }
}

// Hidden pre-activations and activations of one batch.
struct ForwardTrace {
  std::vector<Matrix> pre;  // a_i, i = 0..m-1
  std::vector<Matrix> act;  // y_{i+1}
  Matrix out;
};

ForwardTrace forward_trace(const IcnnModel& model, const Matrix& x) {
  const std::size_t m = model.hidden_layers();
  ForwardTrace tr;
  tr.pre.reserve(m);
  tr.act.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    Matrix a = model.w_x[i] * x;
    a.colwise() += model.b[i];
    if (i > 0) a.noalias() += model.w_y[i - 1] * tr.act.back();
    const double beta = model.beta;
    tr.act.push_back(a.unaryExpr([beta](double t) { return softplus(t, beta); }));
    tr.pre.push_back(std::move(a));
  }
  tr.out = model.w_x[m] * x;
  tr.out.colwise() += model.b[m];
  if (m > 0) tr.out.noalias() += model.w_y[m - 1] * tr.act.back();
  return tr;
}

json matrix_to_json(const Matrix& a) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) data.push_back(a(r, c));
  }
  return json{{"rows", a.rows()}, {"cols", a.cols()}, {"data", data}};
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ModelError("checkpoint missing field '" + std::string(key) + "'" + (where.empty() ? "" : " in " + where));
  }
  return j.at(key);
}

Matrix matrix_from_json(const json& j, const std::string& where) {
  const auto rows = require(j, "rows", where).get<Eigen::Index>();
  const auto cols = require(j, "cols", where).get<Eigen::Index>();
  const auto data = require(j, "data", where).get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw ModelError("checkpoint matrix " + where + " has inconsistent shape");
  }
  Matrix a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return a;
}

Vector vector_from_json(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

double softplus(double t, double beta) {
  const double bt = beta * t;
  if (bt > 30.0) return t + std::log1p(std::exp(-bt)) / beta;
  return std::log1p(std::exp(bt)) / beta;
}

double softplus_grad(double t, double beta) {
  const double bt = beta * t;
  if (bt >= 0.0) return 1.0 / (1.0 + std::exp(-bt));
  const double e = std::exp(bt);
  return e / (1.0 + e);
}

std::size_t IcnnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : w_y) n += static_cast<std::size_t>(w.size());
  for (const auto& w : w_x) n += static_cast<std::size_t>(w.size());
  for (const auto& v : b) n += static_cast<std::size_t>(v.size());
  return n;
}

void IcnnModel::validate() const {
  if (layer_widths.size() < 2) throw ModelError("layer_widths needs at least input and output widths");
  for (int w : layer_widths) {
    if (w <= 0) throw ModelError("layer widths must be positive");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ModelError("beta must be positive");
  const std::size_t m = hidden_layers();
  if (w_x.size() != m + 1 || b.size() != m + 1 || w_y.size() != m) {
    throw ModelError("parameter list lengths do not match layer_widths");
  }
  const auto d = input_dim();
  for (std::size_t i = 0; i <= m; ++i) {
    const Eigen::Index rows = layer_widths[i + 1];
    if (w_x[i].rows() != rows || w_x[i].cols() != d) throw ModelError("W_x[" + std::to_string(i) + "] shape mismatch");
    if (b[i].size() != rows) throw ModelError("b[" + std::to_string(i) + "] shape mismatch");
    if (i >= 1 && (w_y[i - 1].rows() != rows || w_y[i - 1].cols() != layer_widths[i])) {
      throw ModelError("W_y[" + std::to_string(i) + "] shape mismatch");
    }
  }
  if (convex_mode) {
    for (std::size_t j = 0; j < w_y.size(); ++j) {
      if (w_y[j].size() > 0 && w_y[j].minCoeff() < 0.0) {
        throw ModelError("convexity invariant violated: negative entry in W_y[" + std::to_string(j + 1) + "]");
      }
    }
  }
  if (norm.in_shift.size() != d || norm.in_scale.size() != d || norm.out_scale.size() != output_dim()) {
    throw ModelError("normalization statistics do not match model dimensions");
  }
  if ((norm.in_scale.array() <= 0.0).any() || (norm.out_scale.array() <= 0.0).any()) {
    throw ModelError("normalization scales must be positive");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ModelError("learning_rate must be nonnegative");
  if (epochs < 0) throw ModelError("epochs must be nonnegative");
  if (batch_size <= 0) throw ModelError("batch_size must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ModelError("validation_fraction must lie in (0, 1)");
  }
}

IcnnModel make_model(const std::vector<int>& layer_widths, double beta, bool convex_mode, bool augmented,
                     std::uint64_t seed) {
  IcnnModel model;
  model.layer_widths = layer_widths;
  model.beta = beta;
  model.convex_mode = convex_mode;
  model.augmented = augmented;
  if (layer_widths.size() < 2) throw ModelError("layer_widths needs at least input and output widths");

  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& a, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = u(rng);
    }
  };
  const std::size_t m = layer_widths.size() - 2;
  const int d = layer_widths.front();
  for (std::size_t i = 0; i <= m; ++i) {
    const int rows = layer_widths[i + 1];
    if (i >= 1) {
      Matrix wy(rows, layer_widths[i]);
      const double s = 1.0 / std::sqrt(static_cast<double>(layer_widths[i]));
      fill(wy, convex_mode ? 0.0 : -s, s);
      model.w_y.push_back(std::move(wy));
    }
    Matrix wx(rows, d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    fill(wx, -s, s);
    model.w_x.push_back(std::move(wx));
    model.b.push_back(Vector::Zero(rows));
  }
  model.norm.in_shift = Vector::Zero(d);
  model.norm.in_scale = Vector::Ones(d);
  model.norm.out_scale = Vector::Ones(layer_widths.back());
  model.validate();
  return model;
}

Vector icnn_forward(const IcnnModel& model, const Vector& x) {
  check_input(model, x.size());
  return forward_trace(model, x).out.col(0);
}

Matrix icnn_forward_batch(const IcnnModel& model, const Matrix& x) {
  check_input(model, x.rows());
  return forward_trace(model, x).out;
}

Matrix icnn_input_jacobian(const IcnnModel& model, const Vector& x) {
  check_input(model, x.size());
  const std::size_t m = model.hidden_layers();
  const ForwardTrace tr = forward_trace(model, x);
  Matrix d_hidden;  // d y_{i+1} / d x
  for (std::size_t i = 0; i < m; ++i) {
    Matrix inner = model.w_x[i];
    if (i > 0) inner.noalias() += model.w_y[i - 1] * d_hidden;
    const Vector slope = tr.pre[i].col(0).unaryExpr([&](double t) { return softplus_grad(t, model.beta); });
    d_hidden = slope.asDiagonal() * inner;
  }
  Matrix jac = model.w_x[m];
  if (m > 0) jac.noalias() += model.w_y[m - 1] * d_hidden;
  return jac;
}

ModelGrads icnn_param_grads(const IcnnModel& model, const Matrix& inputs, const Matrix& targets) {
  check_input(model, inputs.rows());
  if (inputs.cols() == 0) throw ModelError("empty batch");
  if (targets.cols() != inputs.cols() || targets.rows() != model.output_dim()) {
    throw ModelError("target dimensions do not match batch");
  }
  const std::size_t m = model.hidden_layers();
  const ForwardTrace tr = forward_trace(model, inputs);
  const double denom = static_cast<double>(targets.size());
  const Matrix resid = tr.out - targets;

  ModelGrads g;
  g.loss = resid.squaredNorm() / denom;
  g.w_y.resize(m);
  g.w_x.resize(m + 1);
  g.b.resize(m + 1);

  Matrix delta = (2.0 / denom) * resid;  // d loss / d out
  g.w_x[m] = delta * inputs.transpose();
  g.b[m] = delta.rowwise().sum();
  for (std::size_t i = m; i-- > 0;) {
    // delta currently holds d loss / d (layer i+1 input to the next affine map).
    g.w_y[i] = delta * tr.act[i].transpose();
    Matrix back = model.w_y[i].transpose() * delta;
    const double beta = model.beta;
    delta = back.cwiseProduct(tr.pre[i].unaryExpr([beta](double t) { return softplus_grad(t, beta); }));
    g.w_x[i] = delta * inputs.transpose();
    g.b[i] = delta.rowwise().sum();
  }
  return g;
}

void apply_gradient(IcnnModel& model, const ModelGrads& grads, double learning_rate) {
  for (std::size_t i = 0; i < model.w_x.size(); ++i) {
    model.w_x[i] -= learning_rate * grads.w_x[i];
    model.b[i] -= learning_rate * grads.b[i];
  }
  for (std::size_t j = 0; j < model.w_y.size(); ++j) {
    model.w_y[j] -= learning_rate * grads.w_y[j];
    // Projection onto the nonnegative orthant keeps every output convex.
    if (model.convex_mode) model.w_y[j] = model.w_y[j].cwiseMax(0.0);
  }
}

StepResult train_step(const IcnnModel& model, const Matrix& inputs, const Matrix& targets, const TrainConfig& cfg) {
  const ModelGrads g = icnn_param_grads(model, inputs, targets);
  if (!std::isfinite(g.loss)) throw ModelError("training diverged: non-finite loss");
  StepResult out{model, g.loss};
  apply_gradient(out.model, g, cfg.learning_rate);
  return out;
}

Vector augment_input(const Vector& x_tilde) {
  Vector x(2 * x_tilde.size());
  x << x_tilde, -x_tilde;
  return x;
}

Matrix reduce_augmented_jacobian(const Matrix& jac) {
  if (jac.cols() % 2 != 0) throw ModelError("augmented Jacobian must have an even column count");
  const Eigen::Index d = jac.cols() / 2;
  return jac.leftCols(d) - jac.rightCols(d);
}

IcnnModel embed_plain_in_augmented(const IcnnModel& plain) {
  if (plain.augmented) throw ModelError("model is already augmented");
  IcnnModel aug = plain;
  aug.augmented = true;
  const Eigen::Index d = plain.input_dim();
  aug.layer_widths.front() = static_cast<int>(2 * d);
  for (auto& w : aug.w_x) {
    Matrix wide = Matrix::Zero(w.rows(), 2 * d);
    wide.leftCols(d) = w;
    w = std::move(wide);
  }
  aug.norm.in_shift = augment_input(plain.norm.in_shift);
  aug.norm.in_scale.resize(2 * d);
  aug.norm.in_scale << plain.norm.in_scale, plain.norm.in_scale;
  return aug;
}

Vector predict(const IcnnModel& model, const Vector& raw_x) {
  check_input(model, raw_x.size());
  const Vector x = (raw_x - model.norm.in_shift).cwiseQuotient(model.norm.in_scale);
  return icnn_forward(model, x).cwiseProduct(model.norm.out_scale);
}

Matrix predict_batch(const IcnnModel& model, const Matrix& raw_x) {
  check_input(model, raw_x.rows());
  Matrix x = raw_x.colwise() - model.norm.in_shift;
  x = model.norm.in_scale.cwiseInverse().asDiagonal() * x;
  return model.norm.out_scale.asDiagonal() * icnn_forward_batch(model, x);
}

Matrix predict_jacobian(const IcnnModel& model, const Vector& raw_x) {
  check_input(model, raw_x.size());
  const Vector x = (raw_x - model.norm.in_shift).cwiseQuotient(model.norm.in_scale);
  return model.norm.out_scale.asDiagonal() * icnn_input_jacobian(model, x) *
         model.norm.in_scale.cwiseInverse().asDiagonal();
}

NormStats compute_norm_stats(const Matrix& raw_inputs, const Matrix& raw_targets) {
  if (raw_inputs.cols() == 0) throw ModelError("cannot compute normalization on an empty set");
  NormStats s;
  const double n = static_cast<double>(raw_inputs.cols());
  s.in_shift = raw_inputs.rowwise().mean();
  s.in_scale = ((raw_inputs.colwise() - s.in_shift).array().square().rowwise().sum() / n).sqrt().matrix();
  for (Eigen::Index i = 0; i < s.in_scale.size(); ++i) {
    if (!(s.in_scale(i) > 1e-12)) s.in_scale(i) = 1.0;
  }
  s.out_scale = raw_targets.cwiseAbs().rowwise().maxCoeff();
  for (Eigen::Index i = 0; i < s.out_scale.size(); ++i) {
    if (!(s.out_scale(i) > 1e-12)) s.out_scale(i) = 1.0;
  }
  return s;
}

TrainHistory train_model(IcnnModel& model, const Matrix& raw_inputs, const Matrix& raw_targets,
                         const TrainConfig& cfg, const Matrix* raw_val_inputs, const Matrix* raw_val_targets) {
  cfg.validate();
  model.validate();
  check_input(model, raw_inputs.rows());
  if (raw_targets.rows() != model.output_dim() || raw_targets.cols() != raw_inputs.cols()) {
    throw ModelError("training targets do not match inputs");
  }
  auto normalize = [&model](const Matrix& xi, const Matrix& ti) {
    Matrix x = model.norm.in_scale.cwiseInverse().asDiagonal() * (xi.colwise() - model.norm.in_shift);
    Matrix t = model.norm.out_scale.cwiseInverse().asDiagonal() * ti;
    return std::pair{std::move(x), std::move(t)};
  };
  const auto [x, t] = normalize(raw_inputs, raw_targets);
  Matrix vx, vt;
  const bool has_val = raw_val_inputs != nullptr && raw_val_targets != nullptr && raw_val_inputs->cols() > 0;
  if (has_val) std::tie(vx, vt) = normalize(*raw_val_inputs, *raw_val_targets);

  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  TrainHistory hist;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const ModelGrads g = icnn_param_grads(model, x(Eigen::all, idx), t(Eigen::all, idx));
      if (!std::isfinite(g.loss)) throw ModelError("training diverged at epoch " + std::to_string(epoch));
      apply_gradient(model, g, cfg.learning_rate);
      loss_sum += g.loss;
      ++batches;
    }
    hist.train_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    if (has_val) hist.val_loss.push_back((icnn_forward_batch(model, vx) - vt).squaredNorm() / static_cast<double>(vt.size()));
  }
  return hist;
}

double mean_squared_error(const IcnnModel& model, const Matrix& raw_inputs, const Matrix& raw_targets) {
  if (raw_targets.size() == 0) return 0.0;
  return (predict_batch(model, raw_inputs) - raw_targets).squaredNorm() / static_cast<double>(raw_targets.size());
}

std::string save_model(const IcnnModel& model) {
  model.validate();
  json layers = json::array();
  const std::size_t m = model.hidden_layers();
  for (std::size_t i = 0; i <= m; ++i) {
    json layer;
    layer["w_y"] = i >= 1 ? matrix_to_json(model.w_y[i - 1]) : json(nullptr);
    layer["w_x"] = matrix_to_json(model.w_x[i]);
    layer["b"] = vector_to_json(model.b[i]);
    layers.push_back(std::move(layer));
  }
  json doc;
  doc["format"] = "icnn-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["layer_widths"] = model.layer_widths;
  doc["beta"] = model.beta;
  doc["convex_mode"] = model.convex_mode;
  doc["augmented"] = model.augmented;
  doc["norm_stats"] = {{"in_shift", vector_to_json(model.norm.in_shift)},
                       {"in_scale", vector_to_json(model.norm.in_scale)},
                       {"out_scale", vector_to_json(model.norm.out_scale)}};
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

IcnnModel load_model(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("corrupt checkpoint: ") + e.what());
  }
  try {
    if (require(doc, "format", "").get<std::string>() != "icnn-checkpoint") throw ModelError("not an ICNN checkpoint");
    const int version = require(doc, "version", "").get<int>();
    if (version != kCheckpointVersion) {
      throw ModelError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
    }
    IcnnModel model;
    model.layer_widths = require(doc, "layer_widths", "").get<std::vector<int>>();
    model.beta = require(doc, "beta", "").get<double>();
    model.convex_mode = require(doc, "convex_mode", "").get<bool>();
    model.augmented = require(doc, "augmented", "").get<bool>();
    const json& ns = require(doc, "norm_stats", "");
    model.norm.in_shift = vector_from_json(require(ns, "in_shift", "norm_stats"));
    model.norm.in_scale = vector_from_json(require(ns, "in_scale", "norm_stats"));
    model.norm.out_scale = vector_from_json(require(ns, "out_scale", "norm_stats"));
    const json& layers = require(doc, "layers", "");
    if (!layers.is_array()) throw ModelError("checkpoint field 'layers' must be an array");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string where = "layers[" + std::to_string(i) + "]";
      const json& layer = layers[i];
      if (i >= 1) model.w_y.push_back(matrix_from_json(require(layer, "w_y", where), where + ".w_y"));
      model.w_x.push_back(matrix_from_json(require(layer, "w_x", where), where + ".w_x"));
      model.b.push_back(vector_from_json(require(layer, "b", where)));
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw ModelError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_model_file(const IcnnModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ModelError("cannot write checkpoint " + path);
  f << save_model(model);
}

IcnnModel load_model_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ModelError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_model(ss.str());
}

}  // namespace icnnopf
