#include "icnnopf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace icnnopf {

namespace {

using nlohmann::json;

constexpr int kDatasetVersion = 1;

json columns_to_json(const Matrix& a) {
  json rows = json::array();
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    rows.push_back(std::vector<double>(a.col(c).data(), a.col(c).data() + a.rows()));
  }
  return rows;
}

Matrix columns_from_json(const json& j, Eigen::Index expected_rows, const char* name) {
  if (!j.is_array()) throw DatasetError(std::string("dataset field '") + name + "' must be an array");
  Matrix a(expected_rows, static_cast<Eigen::Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const auto row = j[c].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != expected_rows) {
      throw DatasetError(std::string("dataset field '") + name + "' row " + std::to_string(c) + " has length " +
                         std::to_string(row.size()) + ", expected " + std::to_string(expected_rows));
    }
    a.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const Vector>(row.data(), expected_rows);
  }
  return a;
}

json norm_to_json(const NormStats& s) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return json{{"in_shift", vec(s.in_shift)}, {"in_scale", vec(s.in_scale)}, {"out_scale", vec(s.out_scale)}};
}

NormStats norm_from_json(const json& j) {
  auto vec = [](const json& v) {
    const auto d = v.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size())));
  };
  return NormStats{vec(j.at("in_shift")), vec(j.at("in_scale")), vec(j.at("out_scale"))};
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ControlLayout default_control_layout(const NetworkCase& c, DeviceLimits limits) {
  ControlLayout layout;
  layout.buses = c.control_buses();
  layout.limits.assign(layout.buses.size(), limits);
  return layout;
}

FeatureMap::FeatureMap(std::size_t bus_count, std::size_t slack_index, ControlLayout layout)
    : bus_count_(bus_count), slack_(slack_index), layout_(std::move(layout)), position_(bus_count, -1) {
  if (bus_count_ < 2 || slack_ >= bus_count_) throw DatasetError("feature map needs a slack and at least one load bus");
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < bus_count_; ++i) {
    if (i != slack_) position_[i] = k++;
  }
  for (auto b : layout_.buses) {
    if (b >= bus_count_ || b == slack_) throw DatasetError("controllable device on invalid bus");
  }
  if (layout_.limits.size() != layout_.buses.size()) throw DatasetError("device limits do not match device count");
}

FeatureMap::FeatureMap(const NetworkCase& c, ControlLayout layout)
    : FeatureMap(c.bus_count(), c.slack_index(), std::move(layout)) {}

Vector FeatureMap::features(const Vector& p_net, const Vector& q_net) const {
  const Eigen::Index half = base_dim() / 2;
  Vector s(base_dim());
  for (std::size_t i = 0; i < bus_count_; ++i) {
    if (position_[i] < 0) continue;
    s(position_[i]) = p_net(static_cast<Eigen::Index>(i));
    s(half + position_[i]) = q_net(static_cast<Eigen::Index>(i));
  }
  return augment_input(s);
}

Injection FeatureMap::net_injection(const Vector& controls, const Vector& p_u, const Vector& q_u) const {
  if (controls.size() != layout_.dim()) throw DatasetError("control vector dimension mismatch");
  Injection inj{p_u, q_u};
  const auto nd = static_cast<Eigen::Index>(layout_.device_count());
  for (Eigen::Index k = 0; k < nd; ++k) {
    const auto bus = static_cast<Eigen::Index>(layout_.buses[static_cast<std::size_t>(k)]);
    inj.p(bus) += controls(k);
    inj.q(bus) += controls(nd + k);
  }
  return inj;
}

Vector FeatureMap::features(const Vector& controls, const Vector& p_u, const Vector& q_u) const {
  const Injection inj = net_injection(controls, p_u, q_u);
  return features(inj.p, inj.q);
}

Matrix FeatureMap::control_jacobian(const Matrix& feature_jacobian) const {
  const Matrix reduced = reduce_augmented_jacobian(feature_jacobian);
  const Eigen::Index half = base_dim() / 2;
  const auto nd = static_cast<Eigen::Index>(layout_.device_count());
  Matrix out(reduced.rows(), 2 * nd);
  for (Eigen::Index k = 0; k < nd; ++k) {
    const auto pos = position_[layout_.buses[static_cast<std::size_t>(k)]];
    out.col(k) = reduced.col(pos);
    out.col(nd + k) = reduced.col(half + pos);
  }
  return out;
}

ScenarioSet sample_scenarios(const NetworkCase& c, const ControlLayout& layout, std::size_t count,
                             const SamplerRanges& ranges, std::uint64_t seed) {
  if (count == 0) throw DatasetError("scenario count must be positive");
  if (!(ranges.load_scale_min <= ranges.load_scale_max)) throw DatasetError("load scale range has lo > hi");
  if (ranges.sample_controls && layout.device_count() == 0) {
    throw DatasetError("control ranges are nonzero but the case has no controllable bus");
  }
  ScenarioSet set;
  set.case_hash = case_hash(c);
  set.seed = seed;
  set.ranges = ranges;
  set.layout = layout;
  set.scenarios.reserve(count);

  std::mt19937_64 rng(seed);
  auto draw = [&rng](double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  for (std::size_t s = 0; s < count; ++s) {
    Scenario sc{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& bus = c.buses[static_cast<std::size_t>(i)];
      if (bus.kind == BusKind::Slack) continue;
      const double scale = draw(ranges.load_scale_min, ranges.load_scale_max);
      sc.p_u(i) = -scale * bus.p_load;
      sc.q_u(i) = -scale * bus.q_load;
    }
    if (ranges.sample_controls) {
      for (std::size_t k = 0; k < layout.device_count(); ++k) {
        const auto bus = static_cast<Eigen::Index>(layout.buses[k]);
        sc.p_c(bus) = draw(0.0, layout.limits[k].p_max);
        sc.q_c(bus) = draw(-layout.limits[k].s_max, layout.limits[k].s_max);
      }
    }
    set.scenarios.push_back(std::move(sc));
  }
  return set;
}

Matrix LabeledDataset::features(const std::vector<Eigen::Index>& rows_sel) const {
  const FeatureMap fm = feature_map();
  Matrix out(fm.input_dim(), static_cast<Eigen::Index>(rows_sel.size()));
  for (std::size_t k = 0; k < rows_sel.size(); ++k) {
    const auto r = rows_sel[k];
    out.col(static_cast<Eigen::Index>(k)) = fm.features(controls(r), context_p.col(r), context_q.col(r));
  }
  return out;
}

Vector LabeledDataset::controls(Eigen::Index row) const { return inputs.col(row).head(layout.dim()); }

void LabeledDataset::validate() const {
  const Eigen::Index n = rows();
  if (inputs.rows() != 2 * layout.dim()) throw DatasetError("input width does not match control layout");
  if (context_p.cols() != n || context_q.cols() != n || targets_v.cols() != n || targets_p.cols() != n) {
    throw DatasetError("row counts disagree across inputs, context and targets");
  }
  if (context_p.rows() != static_cast<Eigen::Index>(bus_count) || targets_v.rows() != static_cast<Eigen::Index>(bus_count)) {
    throw DatasetError("per-bus blocks do not match bus count");
  }
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (auto r : *part) {
      if (r < 0 || r >= n) throw DatasetError("split index out of range");
      ++seen[static_cast<std::size_t>(r)];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int k) { return k != 1; })) {
    throw DatasetError("splits must be disjoint and cover every row");
  }
}

LabeledDataset build_dataset(const NetworkCase& c, const ScenarioSet& set, const BuildOptions& opt) {
  if (set.case_hash != case_hash(c)) throw DatasetError("scenario set was sampled for a different case");
  const std::size_t count = set.scenarios.size();
  if (count == 0) throw DatasetError("empty scenario set");
  const FeatureMap fm(c, set.layout);

  struct Labeled {
    bool ok = false;
    DeviationTargets targets;
  };
  std::vector<Labeled> results(count);
  auto label = [&](std::size_t s) {
    const auto& sc = set.scenarios[s];
    const Injection inj{sc.p_u + sc.p_c, sc.q_u + sc.q_c};
    const PowerFlowSolution sol = newton_power_flow(c, inj, opt.newton);
    if (sol.converged) results[s] = Labeled{true, deviation_targets(c, sol)};
  };

  // Each worker owns a strided slice; results land by scenario index.
  unsigned workers = opt.workers ? opt.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(count));
  if (workers <= 1) {
    for (std::size_t s = 0; s < count; ++s) label(s);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < count; s += workers) label(s);
      });
    }
  }

  std::vector<std::size_t> kept;
  for (std::size_t s = 0; s < count; ++s) {
    if (results[s].ok) kept.push_back(s);
  }
  const std::size_t dropped = count - kept.size();
  if (static_cast<double>(dropped) > opt.max_drop_fraction * static_cast<double>(count)) {
    throw DatasetError(std::to_string(dropped) + " of " + std::to_string(count) +
                       " scenarios failed to converge; sampling ranges are too aggressive");
  }

  LabeledDataset d;
  d.case_hash = set.case_hash;
  d.seed = set.seed;
  d.bus_count = c.bus_count();
  d.slack_index = c.slack_index();
  d.ranges = set.ranges;
  d.layout = set.layout;
  d.dropped = dropped;
  const auto rows = static_cast<Eigen::Index>(kept.size());
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  d.inputs.resize(2 * set.layout.dim(), rows);
  d.context_p.resize(n, rows);
  d.context_q.resize(n, rows);
  d.targets_v.resize(n, rows);
  d.targets_p.resize(static_cast<Eigen::Index>(c.branch_count()), rows);
  const auto nd = static_cast<Eigen::Index>(set.layout.device_count());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& sc = set.scenarios[kept[static_cast<std::size_t>(r)]];
    Vector x(set.layout.dim());
    for (Eigen::Index k = 0; k < nd; ++k) {
      const auto bus = static_cast<Eigen::Index>(set.layout.buses[static_cast<std::size_t>(k)]);
      x(k) = sc.p_c(bus);
      x(nd + k) = sc.q_c(bus);
    }
    d.inputs.col(r) = augment_input(x);
    d.context_p.col(r) = sc.p_u;
    d.context_q.col(r) = sc.q_u;
    d.targets_v.col(r) = results[kept[static_cast<std::size_t>(r)]].targets.v_dev;
    d.targets_p.col(r) = results[kept[static_cast<std::size_t>(r)]].targets.p_dev;
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(set.seed ^ 0x5eed5eed5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(opt.test_fraction * static_cast<double>(rows)));
  const auto n_val = static_cast<std::size_t>(std::llround(opt.val_fraction * static_cast<double>(rows)));
  if (n_test + n_val >= order.size()) throw DatasetError("too few rows for the requested split");
  d.split.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  d.split.val.assign(order.end() - static_cast<std::ptrdiff_t>(n_test + n_val),
                     order.end() - static_cast<std::ptrdiff_t>(n_test));
  d.split.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test + n_val));
  for (auto* part : {&d.split.train, &d.split.val, &d.split.test}) std::sort(part->begin(), part->end());

  const Matrix train_features = d.features(d.split.train);
  d.norm_v = compute_norm_stats(train_features, d.targets_v(Eigen::all, d.split.train));
  d.norm_p = compute_norm_stats(train_features, d.targets_p(Eigen::all, d.split.train));
  d.validate();
  return d;
}

std::string save_dataset(const LabeledDataset& d) {
  d.validate();
  json doc;
  doc["format"] = "icnn-opf-dataset";
  doc["version"] = kDatasetVersion;
  doc["case_hash"] = hash_hex(d.case_hash);
  doc["seed"] = d.seed;
  doc["bus_count"] = d.bus_count;
  doc["slack_index"] = d.slack_index;
  doc["ranges"] = {{"load_scale_min", d.ranges.load_scale_min},
                   {"load_scale_max", d.ranges.load_scale_max},
                   {"sample_controls", d.ranges.sample_controls}};
  json devices = json::array();
  for (std::size_t k = 0; k < d.layout.device_count(); ++k) {
    devices.push_back({{"bus", d.layout.buses[k]}, {"p_max", d.layout.limits[k].p_max}, {"s_max", d.layout.limits[k].s_max}});
  }
  doc["devices"] = devices;
  doc["dropped"] = d.dropped;
  doc["rows"] = d.rows();
  doc["split"] = {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}};
  doc["norm_v"] = norm_to_json(d.norm_v);
  doc["norm_p"] = norm_to_json(d.norm_p);
  doc["inputs"] = columns_to_json(d.inputs);
  doc["context_p"] = columns_to_json(d.context_p);
  doc["context_q"] = columns_to_json(d.context_q);
  doc["targets_v"] = columns_to_json(d.targets_v);
  doc["targets_p"] = columns_to_json(d.targets_p);
  return doc.dump() + "\n";
}

LabeledDataset load_dataset(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw DatasetError(std::string("corrupt or truncated dataset: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "icnn-opf-dataset") throw DatasetError("not a dataset document");
    const int version = doc.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw DatasetError("dataset version " + std::to_string(version) + " unsupported (expected " +
                         std::to_string(kDatasetVersion) + ")");
    }
    LabeledDataset d;
    d.case_hash = std::stoull(doc.at("case_hash").get<std::string>(), nullptr, 16);
    d.seed = doc.at("seed").get<std::uint64_t>();
    d.bus_count = doc.at("bus_count").get<std::size_t>();
    d.slack_index = doc.at("slack_index").get<std::size_t>();
    const json& r = doc.at("ranges");
    d.ranges = {r.at("load_scale_min").get<double>(), r.at("load_scale_max").get<double>(),
                r.at("sample_controls").get<bool>()};
    for (const auto& dev : doc.at("devices")) {
      d.layout.buses.push_back(dev.at("bus").get<std::size_t>());
      d.layout.limits.push_back({dev.at("p_max").get<double>(), dev.at("s_max").get<double>()});
    }
    d.dropped = doc.at("dropped").get<std::size_t>();
    const auto rows = doc.at("rows").get<Eigen::Index>();
    const json& sp = doc.at("split");
    d.split = {sp.at("train").get<std::vector<Eigen::Index>>(), sp.at("val").get<std::vector<Eigen::Index>>(),
               sp.at("test").get<std::vector<Eigen::Index>>()};
    d.norm_v = norm_from_json(doc.at("norm_v"));
    d.norm_p = norm_from_json(doc.at("norm_p"));
    const auto n = static_cast<Eigen::Index>(d.bus_count);
    d.inputs = columns_from_json(doc.at("inputs"), 2 * d.layout.dim(), "inputs");
    d.context_p = columns_from_json(doc.at("context_p"), n, "context_p");
    d.context_q = columns_from_json(doc.at("context_q"), n, "context_q");
    d.targets_v = columns_from_json(doc.at("targets_v"), n, "targets_v");
    const auto& tp = doc.at("targets_p");
    const Eigen::Index nb = tp.empty() ? 0 : static_cast<Eigen::Index>(tp[0].size());
    d.targets_p = columns_from_json(tp, nb, "targets_p");
    if (d.rows() != rows) throw DatasetError("row count header disagrees with stored rows");
    d.validate();
    return d;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("corrupt dataset: ") + e.what());
  }
}

void save_dataset_file(const LabeledDataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot write dataset " + path);
  f << save_dataset(d);
}

LabeledDataset load_dataset_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open dataset " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_dataset(ss.str());
}

}  // namespace icnnopf
