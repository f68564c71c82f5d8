#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "icnnopf/icnn.hpp"
#include "icnnopf/powerflow.hpp"

namespace icnnopf {

/// Inverter-style device limits: 0 <= p <= p_max and p^2 + q^2 <= s_max^2.
struct DeviceLimits {
  double p_max = 0.5;
  double s_max = 0.6;

  bool operator==(const DeviceLimits&) const = default;
};

/// Controllable devices and their bus positions. The control vector is
/// x = [p^c; q^c] with one entry of each per device, in `buses` order.
struct ControlLayout {
  std::vector<std::size_t> buses;
  std::vector<DeviceLimits> limits;

  std::size_t device_count() const { return buses.size(); }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(2 * buses.size()); }

  bool operator==(const ControlLayout&) const = default;
};

/// One device per bus flagged has_control, all with the same limits.
ControlLayout default_control_layout(const NetworkCase& c, DeviceLimits limits = {});

/// Input features of the learned surrogates.
///
/// The surrogate of a deviation vector is a function of the net per-bus
/// injection (p, q) = (p^c + p^u, q^c + q^u). Features are the augmented vector
/// [s; -s] with s = [p; q] restricted to non-slack buses. For a fixed context
/// (p^u, q^u) the features are affine in the controls, so a model convex in its
/// features is convex in the controls.
class FeatureMap {
 public:
  FeatureMap(std::size_t bus_count, std::size_t slack_index, ControlLayout layout);
  FeatureMap(const NetworkCase& c, ControlLayout layout);

  /// Length of s (before augmentation).
  Eigen::Index base_dim() const { return static_cast<Eigen::Index>(2 * (bus_count_ - 1)); }
  Eigen::Index input_dim() const { return 2 * base_dim(); }
  const ControlLayout& layout() const { return layout_; }

  Vector features(const Vector& p_net, const Vector& q_net) const;
  Vector features(const Vector& controls, const Vector& p_u, const Vector& q_u) const;
  /// Full per-bus injection from controls plus context.
  Injection net_injection(const Vector& controls, const Vector& p_u, const Vector& q_u) const;
  /// Maps d(out)/d(features) to d(out)/d(controls): augmentation reduction,
  /// then the columns of the controllable buses.
  Matrix control_jacobian(const Matrix& feature_jacobian) const;

 private:
  std::size_t bus_count_;
  std::size_t slack_;
  ControlLayout layout_;
  std::vector<Eigen::Index> position_;  // bus -> index within the p block of s, -1 for slack
};

struct SamplerRanges {
  double load_scale_min = 0.6;
  double load_scale_max = 1.4;
  bool sample_controls = true;

  bool operator==(const SamplerRanges&) const = default;
};

/// Context (p^u, q^u) and controls (p^c, q^c), all full per-bus vectors.
struct Scenario {
  Vector p_u, q_u, p_c, q_c;
};

struct ScenarioSet {
  std::uint64_t case_hash = 0;
  std::uint64_t seed = 0;
  SamplerRanges ranges;
  ControlLayout layout;
  std::vector<Scenario> scenarios;
};

/// Independent uniform draws. Each non-slack bus load is scaled by a factor in
/// [load_scale_min, load_scale_max] (same factor for p and q); each device draws
/// p^c in [0, p_max] and q^c in [-s_max, s_max]. Deterministic in the seed.
ScenarioSet sample_scenarios(const NetworkCase& c, const ControlLayout& layout, std::size_t count,
                             const SamplerRanges& ranges, std::uint64_t seed);

struct DatasetSplit {
  std::vector<Eigen::Index> train, val, test;
};

/// Newton-labelled samples, one per column.
struct LabeledDataset {
  std::uint64_t case_hash = 0;
  std::uint64_t seed = 0;
  std::size_t bus_count = 0;
  std::size_t slack_index = 0;
  SamplerRanges ranges;
  ControlLayout layout;
  std::size_t dropped = 0;

  Matrix inputs;     // augmented controls [x; -x]
  Matrix context_p;  // p^u per bus
  Matrix context_q;  // q^u per bus
  Matrix targets_v;  // v_dev per bus
  Matrix targets_p;  // p_dev per branch
  DatasetSplit split;
  NormStats norm_v;  // feature statistics and v_dev scale, from the train split
  NormStats norm_p;

  Eigen::Index rows() const { return inputs.cols(); }
  FeatureMap feature_map() const { return FeatureMap(bus_count, slack_index, layout); }
  /// Raw surrogate features of the selected rows, one per column.
  Matrix features(const std::vector<Eigen::Index>& rows) const;
  Vector controls(Eigen::Index row) const;

  /// Throws DatasetError if row counts or split indices are inconsistent.
  void validate() const;
};

struct BuildOptions {
  NewtonOptions newton;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  double max_drop_fraction = 0.05;
  unsigned workers = 0;  // 0: hardware concurrency
};

/// Labels every scenario with a Newton solve. Non-convergent scenarios are
/// dropped and counted; more than max_drop_fraction aborts. Splits by a
/// seeded shuffle and computes normalization on the train split only.
LabeledDataset build_dataset(const NetworkCase& c, const ScenarioSet& set, const BuildOptions& opt = {});

std::string save_dataset(const LabeledDataset& d);
LabeledDataset load_dataset(std::string_view document);
void save_dataset_file(const LabeledDataset& d, const std::string& path);
LabeledDataset load_dataset_file(const std::string& path);

std::string hash_hex(std::uint64_t h);

}  // namespace icnnopf
