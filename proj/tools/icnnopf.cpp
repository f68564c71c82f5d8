#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "icnnopf/opf.hpp"
#include "icnnopf/report.hpp"

using namespace icnnopf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class Level { Error, Warn, Info, Debug };
Level g_level = Level::Info;

template <typename... Args>
void log(Level l, const Args&... args) {
  if (l > g_level) return;
  static const char* tags[] = {"error", "warn", "info", "debug"};
  std::ostringstream s;
  (s << ... << args);
  std::cerr << "[" << tags[static_cast<int>(l)] << "] " << s.str() << '\n';
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_field(const json& j, const char* key, std::size_t expected) {
  if (!j.contains(key)) throw std::runtime_error(std::string("missing field '") + key + "'");
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != expected) {
    throw std::runtime_error(std::string("field '") + key + "' has " + std::to_string(v.size()) + " entries, expected " +
                             std::to_string(expected));
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string resolve(const std::string& out_dir, const std::string& path, const char* fallback) {
  const fs::path p = path.empty() ? fs::path(out_dir) / fallback : fs::path(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p.string();
}

struct Global {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::string log_level = "info";
};

// Context from a file, a fixed load scale, or the violation synthesizer.
struct ContextArgs {
  std::string file;
  double load_scale = 0.0;
  int min_violations = 3;
};

struct ResolvedContext {
  Context ctx;
  std::string source;
};

ResolvedContext resolve_context(const NetworkCase& c, const ContextArgs& a) {
  if (!a.file.empty()) {
    const json j = json::parse(read_text(a.file));
    return {{vector_field(j, "p_u", c.bus_count()), vector_field(j, "q_u", c.bus_count())}, "file:" + a.file};
  }
  if (a.load_scale > 0.0) return {scaled_context(c, a.load_scale), "load_scale=" + format_real(a.load_scale)};
  const ViolationContext v = synthesize_violation_context(c, a.min_violations);
  log(Level::Info, "synthesized context at load scale ", v.load_scale, " with ", v.violated_buses, " violated buses");
  return {v.context, "synthesized load_scale=" + format_real(v.load_scale)};
}

struct SolverArgs {
  double upsilon = 1e-3;
  double epsilon = 1e-3;
  double mu = 0.0;
  int max_iter = 20000;
  double stop_tol = 1e-6;
  double kappa = 0.005;
  double cost_p = 0.1;
  double cost_q = 0.1;
  double p_max = 0.5;
  double s_max = 0.6;
};

void add_solver_flags(CLI::App* cmd, SolverArgs& s) {
  cmd->add_option("--upsilon", s.upsilon, "primal regularization")->capture_default_str();
  cmd->add_option("--epsilon", s.epsilon, "dual regularization")->capture_default_str();
  cmd->add_option("--mu", s.mu, "step size (default: estimated from a sampled Lipschitz bound)");
  cmd->add_option("--max-iter", s.max_iter)->capture_default_str();
  cmd->add_option("--stop-tol", s.stop_tol)->capture_default_str();
  cmd->add_option("--kappa", s.kappa, "model-error allowance on verified deviations (pu)")->capture_default_str();
  cmd->add_option("--cost-p", s.cost_p)->capture_default_str();
  cmd->add_option("--cost-q", s.cost_q)->capture_default_str();
  cmd->add_option("--device-p-max", s.p_max)->capture_default_str();
  cmd->add_option("--device-s-max", s.s_max)->capture_default_str();
}

void add_context_flags(CLI::App* cmd, ContextArgs& a) {
  cmd->add_option("--context", a.file, "JSON {p_u, q_u}; default: synthesize a violating context");
  cmd->add_option("--load-scale", a.load_scale, "use nominal loads times this factor as the context");
  cmd->add_option("--min-violations", a.min_violations)->capture_default_str();
}

OpfRunOptions run_options(const SolverArgs& s, const Global& g) {
  OpfRunOptions o;
  o.costs = {s.cost_p, s.cost_q};
  o.kappa = s.kappa;
  o.solver.upsilon = s.upsilon;
  o.solver.epsilon = s.epsilon;
  if (s.mu > 0.0) o.solver.mu = s.mu;
  o.solver.max_iter = s.max_iter;
  o.solver.stop_tol = s.stop_tol;
  o.solver.seed = g.seed;
  return o;
}

void echo_solver(std::vector<std::pair<std::string, std::string>>& echo, const SolverArgs& s,
                 const OpfOutcome& o) {
  echo.emplace_back("upsilon", format_real(s.upsilon));
  echo.emplace_back("epsilon", format_real(s.epsilon));
  echo.emplace_back("mu", format_real(o.solve.mu));
  echo.emplace_back("max_iter", std::to_string(s.max_iter));
  echo.emplace_back("stop_tol", format_real(s.stop_tol));
  echo.emplace_back("kappa", format_real(s.kappa));
  echo.emplace_back("cost_p", format_real(s.cost_p));
  echo.emplace_back("cost_q", format_real(s.cost_q));
  echo.emplace_back("device_p_max", format_real(s.p_max));
  echo.emplace_back("device_s_max", format_real(s.s_max));
}

json outcome_json(const NetworkCase& c, const ControlLayout& layout, const OpfOutcome& o) {
  json devices = json::array();
  const auto nd = static_cast<Eigen::Index>(layout.device_count());
  for (Eigen::Index k = 0; k < nd; ++k) {
    devices.push_back({{"bus", c.buses[layout.buses[static_cast<std::size_t>(k)]].id},
                       {"p", o.controls(k)},
                       {"q", o.controls(nd + k)}});
  }
  json lambda = json::object();
  for (std::size_t j = 0; j < o.solve.state.lambda.size(); ++j) {
    lambda[j == 0 ? "voltage" : "flow"] = to_json(o.solve.state.lambda[j]);
  }
  return {{"method", o.method},
          {"mode", std::string(to_string(o.mode))},
          {"objective", o.objective},
          {"iterations", o.solve.state.iter},
          {"converged", o.solve.converged},
          {"mu", o.solve.mu},
          {"fixed_point_residual", o.solve.fixed_point_residual},
          {"devices", devices},
          {"lambda", lambda},
          {"kappa", o.kappa},
          {"verification",
           {{"oracle", "newton"},
            {"violated_buses_before", o.violations_before.voltage},
            {"violated_buses_after", o.violations_after.voltage},
            {"violated_branches_after", o.violations_after.flow},
            {"worst_voltage_excess_before", o.violations_before.worst_voltage_excess},
            {"worst_voltage_excess_after", o.violations_after.worst_voltage_excess},
            {"v_mag_before", to_json(o.before.v_mag)},
            {"v_mag_after", to_json(o.after.v_mag)}}}};
}

std::string file_hash(const std::string& path) { return hash_hex(fnv1a64(read_text(path))); }

int case_validate(const std::string& path) {
  const NetworkCase raw = parse_case_unchecked(read_text(path));
  const auto diags = validate_bounds(raw);
  if (!diags.empty()) {
    for (const auto& d : diags) std::cout << "invalid: " << d.subject << ": " << d.message << '\n';
    return 2;
  }
  const NetworkCase c = parse_case(read_text(path));
  std::cout << "ok: " << c.bus_count() << " buses, " << c.branch_count() << " branches, "
            << to_string(c.topology) << ", " << c.control_buses().size() << " controllable, hash "
            << hash_hex(case_hash(c)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Input convex neural network surrogates for distribution-network OPF"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "seed for sampling, training and step-size estimation")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "directory for outputs without an explicit path")->capture_default_str();
  app.add_option("--log-level", g.log_level)
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}))
      ->capture_default_str();

  std::string case_path;
  std::string out_path;

  // case validate
  auto* case_cmd = app.add_subcommand("case", "network case utilities")->require_subcommand(1);
  auto* validate_cmd = case_cmd->add_subcommand("validate", "parse and check a case document");
  validate_cmd->add_option("--case", case_path)->required();

  // pf run
  std::string injections_path, method = "newton";
  auto* pf_cmd = app.add_subcommand("pf", "power flow")->require_subcommand(1);
  auto* pf_run = pf_cmd->add_subcommand("run", "solve one power flow");
  pf_run->add_option("--case", case_path)->required();
  pf_run->add_option("--injections", injections_path, "JSON {p, q} per bus in pu (default: nominal loads)");
  pf_run->add_option("--method", method)->check(CLI::IsMember({"newton", "lindistflow"}))->capture_default_str();
  pf_run->add_option("--out", out_path);

  // data gen
  std::size_t count = 5000;
  SamplerRanges ranges;
  unsigned workers = 0;
  auto* data_cmd = app.add_subcommand("data", "datasets")->require_subcommand(1);
  auto* data_gen = data_cmd->add_subcommand("gen", "sample and label scenarios");
  data_gen->add_option("--case", case_path)->required();
  data_gen->add_option("--count", count)->capture_default_str();
  data_gen->add_option("--load-min", ranges.load_scale_min)->capture_default_str();
  data_gen->add_option("--load-max", ranges.load_scale_max)->capture_default_str();
  data_gen->add_option("--workers", workers, "labelling threads (0: all cores)")->capture_default_str();
  data_gen->add_option("--out", out_path);

  // train
  std::string dataset_path, layers = "64,64", target = "vdev";
  double beta = 5.0;
  bool convex = true;
  TrainConfig tc;
  auto* train_cmd = app.add_subcommand("train", "train a surrogate on a dataset");
  train_cmd->add_option("--dataset", dataset_path)->required();
  train_cmd->add_option("--layers", layers, "hidden widths")->capture_default_str();
  train_cmd->add_option("--beta", beta)->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--convex", convex, "false trains the unconstrained baseline")->capture_default_str();
  train_cmd->add_option("--target", target)->check(CLI::IsMember({"vdev", "pdev"}))->capture_default_str();
  train_cmd->add_option("--out", out_path);

  // opf solve
  std::string model_v, model_p, mlp_v, mlp_p, objective = "coordinated-pq", trace_path;
  SolverArgs sa;
  ContextArgs ca;
  auto* opf_cmd = app.add_subcommand("opf", "surrogate OPF")->require_subcommand(1);
  auto* opf_solve = opf_cmd->add_subcommand("solve", "solve and verify one OPF");
  opf_solve->add_option("--case", case_path)->required();
  opf_solve->add_option("--model-v", model_v)->required();
  opf_solve->add_option("--model-p", model_p)->required();
  opf_solve->add_option("--objective", objective)
      ->check(CLI::IsMember({"coordinated-pq", "vvo"}))
      ->capture_default_str();
  opf_solve->add_option("--out", out_path);
  opf_solve->add_option("--trace", trace_path);
  add_context_flags(opf_solve, ca);
  add_solver_flags(opf_solve, sa);

  // eval mse / eval opf
  auto* eval_cmd = app.add_subcommand("eval", "comparison studies")->require_subcommand(1);
  auto* eval_mse = eval_cmd->add_subcommand("mse", "test-split MSE of A1..A4");
  eval_mse->add_option("--case", case_path)->required();
  eval_mse->add_option("--dataset", dataset_path)->required();
  eval_mse->add_option("--model-v", model_v)->required();
  eval_mse->add_option("--model-p", model_p)->required();
  eval_mse->add_option("--mlp-v", mlp_v);
  eval_mse->add_option("--mlp-p", mlp_p);
  eval_mse->add_option("--out", out_path);

  auto* eval_opf = eval_cmd->add_subcommand("opf", "ICNN, VVO, MLP and LinDistFlow OPF on one context");
  eval_opf->add_option("--case", case_path)->required();
  eval_opf->add_option("--model-v", model_v)->required();
  eval_opf->add_option("--model-p", model_p)->required();
  eval_opf->add_option("--mlp-v", mlp_v);
  eval_opf->add_option("--mlp-p", mlp_p);
  eval_opf->add_option("--out", out_path);
  add_context_flags(eval_opf, ca);
  add_solver_flags(eval_opf, sa);

  // report
  auto* report_cmd = app.add_subcommand("report", "full experiment report into --out-dir");
  report_cmd->add_option("--case", case_path)->required();
  report_cmd->add_option("--dataset", dataset_path)->required();
  report_cmd->add_option("--model-v", model_v)->required();
  report_cmd->add_option("--model-p", model_p)->required();
  report_cmd->add_option("--mlp-v", mlp_v);
  report_cmd->add_option("--mlp-p", mlp_p);
  add_context_flags(report_cmd, ca);
  add_solver_flags(report_cmd, sa);

  CLI11_PARSE(app, argc, argv);
  g_level = g.log_level == "error" ? Level::Error
            : g.log_level == "warn"  ? Level::Warn
            : g.log_level == "debug" ? Level::Debug
                                     : Level::Info;

  try {
    if (validate_cmd->parsed()) return case_validate(case_path);

    if (pf_run->parsed()) {
      const NetworkCase c = load_case_file(case_path);
      Injection inj = nominal_injection(c);
      if (!injections_path.empty()) {
        const json j = json::parse(read_text(injections_path));
        inj = {vector_field(j, "p", c.bus_count()), vector_field(j, "q", c.bus_count())};
      }
      const PowerFlowSolution s = method == "newton" ? newton_power_flow(c, inj) : lindistflow(c, inj);
      const json out = {{"method", method},
                        {"converged", s.converged},
                        {"iterations", s.iterations},
                        {"max_mismatch", s.max_mismatch},
                        {"singular_jacobian", s.singular_jacobian},
                        {"v_mag", to_json(s.v_mag)},
                        {"v_ang", to_json(s.v_ang)},
                        {"branch_p", to_json(s.branch_p)}};
      if (out_path.empty()) {
        std::cout << out.dump(2) << '\n';
      } else {
        write_text(out_path, out.dump(2) + "\n");
      }
      if (!s.converged) log(Level::Warn, "power flow did not converge");
      return s.converged ? 0 : 3;
    }

    if (data_gen->parsed()) {
      const NetworkCase c = load_case_file(case_path);
      const ControlLayout layout = default_control_layout(c);
      BuildOptions bo;
      bo.workers = workers;
      log(Level::Info, "labelling ", count, " scenarios");
      const LabeledDataset d = build_dataset(c, sample_scenarios(c, layout, count, ranges, g.seed), bo);
      if (d.dropped) log(Level::Warn, d.dropped, " scenarios dropped (no Newton convergence)");
      const std::string path = resolve(g.out_dir, out_path, "dataset.json");
      save_dataset_file(d, path);
      log(Level::Info, "wrote ", path, " (train ", d.split.train.size(), ", val ", d.split.val.size(), ", test ",
          d.split.test.size(), ")");
      return 0;
    }

    if (train_cmd->parsed()) {
      const LabeledDataset d = load_dataset_file(dataset_path);
      std::vector<int> widths;
      {
        std::stringstream ss(layers);
        for (std::string tok; std::getline(ss, tok, ',');) widths.push_back(std::stoi(tok));
      }
      const bool volt = target == "vdev";
      const Matrix& all_targets = volt ? d.targets_v : d.targets_p;
      const Matrix x_train = d.features(d.split.train), x_val = d.features(d.split.val);
      const Matrix y_train = all_targets(Eigen::all, d.split.train), y_val = all_targets(Eigen::all, d.split.val);
      widths.insert(widths.begin(), static_cast<int>(x_train.rows()));
      widths.push_back(static_cast<int>(y_train.rows()));
      tc.seed = g.seed;
      IcnnModel m = make_model(widths, beta, convex, true, g.seed);
      m.norm = volt ? d.norm_v : d.norm_p;
      const TrainHistory h = train_model(m, x_train, y_train, tc, &x_val, &y_val);
      for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        log(Level::Debug, "epoch ", e + 1, " train ", h.train_loss[e], " val ", h.val_loss[e]);
      }
      log(Level::Info, target, (convex ? " icnn" : " mlp"), " validation MSE ",
          format_real(mean_squared_error(m, x_val, y_val)));
      const std::string path = resolve(g.out_dir, out_path, volt ? "model_v.json" : "model_p.json");
      save_model_file(m, path);
      return 0;
    }

    const bool any_opf = opf_solve->parsed() || eval_opf->parsed() || report_cmd->parsed();
    const bool any_mse = eval_mse->parsed() || report_cmd->parsed();
    const NetworkCase c = load_case_file(case_path);
    const ControlLayout layout = default_control_layout(c, DeviceLimits{sa.p_max, sa.s_max});
    const IcnnModel mv = load_model_file(model_v), mp = load_model_file(model_p);
    std::optional<IcnnModel> mlpv, mlpp;
    if (mlp_v.empty() != mlp_p.empty()) throw std::runtime_error("--mlp-v and --mlp-p must be given together");
    if (!mlp_v.empty()) {
      mlpv = load_model_file(mlp_v);
      mlpp = load_model_file(mlp_p);
    }

    ExperimentReport report;
    auto& echo = report.config_echo;
    echo.emplace_back("case_hash", hash_hex(case_hash(c)));
    echo.emplace_back("seed", std::to_string(g.seed));
    echo.emplace_back("model_v", file_hash(model_v));
    echo.emplace_back("model_p", file_hash(model_p));
    if (mlpv) {
      echo.emplace_back("mlp_v", file_hash(mlp_v));
      echo.emplace_back("mlp_p", file_hash(mlp_p));
    }

    if (any_mse) {
      const LabeledDataset d = load_dataset_file(dataset_path);
      echo.emplace_back("dataset_seed", std::to_string(d.seed));
      echo.emplace_back("dataset_rows", std::to_string(d.rows()));
      report.mse_table = run_mse_comparison(c, d, mv, mp, mlpv ? &*mlpv : nullptr, mlpp ? &*mlpp : nullptr);
      for (const auto& r : report.mse_table) {
        log(Level::Info, r.model, " voltage ", r.voltage_mse ? format_real(*r.voltage_mse) : "--", " flow ",
            r.flow_mse ? format_real(*r.flow_mse) : "--");
      }
      if (eval_mse->parsed()) {
        std::ostringstream s;
        write_mse_table(report.mse_table, s);
        write_text(resolve(g.out_dir, out_path, "mse_table.csv"), s.str());
        return 0;
      }
    }

    if (!any_opf) return 0;
    const ResolvedContext rc = resolve_context(c, ca);
    echo.emplace_back("context", rc.source);
    OpfRunOptions opt = run_options(sa, g);

    if (opf_solve->parsed()) {
      opt.solver.record_iterates = false;
      const OpfOutcome o = objective == "vvo" ? solve_vvo(c, layout, rc.ctx, mv, mp, opt)
                                              : solve_coordinated_pq(c, layout, rc.ctx, mv, mp, opt);
      log(Level::Info, "violated buses ", o.violations_before.voltage, " -> ", o.violations_after.voltage, " after ",
          o.solve.state.iter, " iterations");
      json out = outcome_json(c, layout, o);
      out["context"] = rc.source;
      write_text(resolve(g.out_dir, out_path, "opf_solution.json"), out.dump(2) + "\n");
      if (!trace_path.empty()) {
        std::ostringstream s;
        write_trace_csv(o.solve, s);
        write_text(trace_path, s.str());
      }
      return 0;
    }

    // eval opf / report: every method on the same context
    opt.solver.record_iterates = true;
    const OpfOutcome icnn_pq = solve_coordinated_pq(c, layout, rc.ctx, mv, mp, opt);
    opt.solver.record_iterates = false;
    std::vector<OpfOutcome> outcomes;
    outcomes.push_back(icnn_pq);
    outcomes.push_back(solve_vvo(c, layout, rc.ctx, mv, mp, opt));
    if (mlpv) outcomes.push_back(solve_coordinated_pq(c, layout, rc.ctx, *mlpv, *mlpp, opt));
    if (c.topology == TopologyKind::Radial) {
      outcomes.push_back(solve_lindistflow_opf(c, layout, rc.ctx, ControlMode::CoordinatedPQ, opt));
    }
    for (const auto& o : outcomes) {
      report.opf_table.push_back(summarize(o));
      log(Level::Info, o.method, " [", to_string(o.mode), "] violated buses ", o.violations_before.voltage, " -> ",
          o.violations_after.voltage);
    }
    echo_solver(echo, sa, icnn_pq);

    if (eval_opf->parsed()) {
      json out = json::array();
      for (const auto& o : outcomes) out.push_back(outcome_json(c, layout, o));
      write_text(resolve(g.out_dir, out_path, "opf_eval.json"), out.dump(2) + "\n");
      std::ostringstream s;
      write_opf_table(report.opf_table, s);
      write_text((fs::path(g.out_dir) / "opf_table.csv").string(), s.str());
      return 0;
    }

    report.before_after = before_after_rows(c, icnn_pq);
    fill_convergence_trace(report, c, layout, icnn_pq.solve);
    emit_report(report, g.out_dir);
    {
      std::ostringstream s;
      write_trace_csv(icnn_pq.solve, s);
      write_text((fs::path(g.out_dir) / "solver_trace.csv").string(), s.str());
    }
    log(Level::Info, "report written to ", g.out_dir);
    return 0;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return 1;
  }
}
