#include "icnnopf/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace icnnopf {

std::string format_real(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10e", v);
  return buf;
}

std::vector<BeforeAfterRow> before_after_rows(const NetworkCase& c, const OpfOutcome& outcome) {
  std::vector<BeforeAfterRow> rows;
  for (std::size_t i = 0; i < c.bus_count(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    BeforeAfterRow r;
    r.bus_id = c.buses[i].id;
    r.delta_v = outcome.dev_before.delta_v(k);
    r.v_dev_before = outcome.dev_before.v_dev(k);
    r.v_dev_predicted = outcome.predicted_before.size() ? outcome.predicted_before(k) : 0.0;
    r.v_dev_after = outcome.dev_after.v_dev(k);
    rows.push_back(r);
  }
  return rows;
}

OpfSummaryRow summarize(const OpfOutcome& outcome) {
  return OpfSummaryRow{outcome.method,
                       std::string(to_string(outcome.mode)),
                       outcome.objective,
                       outcome.solve.state.iter,
                       outcome.solve.converged,
                       outcome.violations_before.voltage,
                       outcome.violations_after.voltage,
                       outcome.violations_after.worst_voltage_excess};
}

void fill_convergence_trace(ExperimentReport& report, const NetworkCase& c, const ControlLayout& layout,
                            const SolveResult& solve) {
  const auto nd = static_cast<Eigen::Index>(layout.device_count());
  report.trace_devices.clear();
  for (const char* kind : {"p", "q"}) {
    for (auto bus : layout.buses) report.trace_devices.push_back(std::string(kind) + "_bus" + std::to_string(c.buses[bus].id));
  }
  report.convergence_trace.clear();
  for (const auto& z : solve.trajectory) {
    report.convergence_trace.emplace_back(z.data(), z.data() + 2 * nd);
  }
}

void write_trace_csv(const SolveResult& solve, std::ostream& out) {
  out << "iter,objective,max_surrogate_violation,step_norm,lambda_max\n";
  for (const auto& r : solve.history) {
    out << r.iter << ',' << format_real(r.objective) << ',' << format_real(r.max_violation) << ','
        << format_real(r.step_norm) << ',' << format_real(r.lambda_max) << '\n';
  }
}

void write_mse_table(const std::vector<MseRow>& rows, std::ostream& out) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("--"); };
  out << "model,description,voltage_deviation_mse,line_flow_deviation_mse\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.description << ',' << opt(r.voltage_mse) << ',' << opt(r.flow_mse) << '\n';
  }
}

void write_opf_table(const std::vector<OpfSummaryRow>& rows, std::ostream& out) {
  out << "method,mode,objective,iterations,converged,violations_before,violations_after,worst_excess_after\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.mode << ',' << format_real(r.objective) << ',' << r.iterations << ','
        << (r.converged ? "true" : "false") << ',' << r.violations_before << ',' << r.violations_after << ','
        << format_real(r.worst_excess_after) << '\n';
  }
}

void emit_report(const ExperimentReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto open = [&](const char* name) {
    std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
    if (!f) throw std::runtime_error(std::string("cannot write ") + (fs::path(out_dir) / name).string());
    return f;
  };
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("--"); };

  {
    auto f = open("mse_table.csv");
    write_mse_table(report.mse_table, f);
  }
  {
    auto f = open("before_after.csv");
    f << "bus,delta_v,v_dev_before,v_dev_predicted,v_dev_after,oracle\n";
    for (const auto& r : report.before_after) {
      f << r.bus_id << ',' << format_real(r.delta_v) << ',' << format_real(r.v_dev_before) << ','
        << format_real(r.v_dev_predicted) << ',' << format_real(r.v_dev_after) << ',' << r.oracle << '\n';
    }
  }
  {
    auto f = open("convergence_trace.csv");
    f << "iter";
    for (const auto& c : report.trace_devices) f << ',' << c;
    f << '\n';
    for (std::size_t k = 0; k < report.convergence_trace.size(); ++k) {
      f << k;
      for (double v : report.convergence_trace[k]) f << ',' << format_real(v);
      f << '\n';
    }
  }
  {
    auto f = open("opf_table.csv");
    write_opf_table(report.opf_table, f);
  }
  {
    auto f = open("summary.txt");
    f << "configuration\n";
    for (const auto& [k, v] : report.config_echo) f << "  " << k << " = " << v << '\n';
    f << "\nsurrogate accuracy (test split, MSE in pu^2)\n";
    for (const auto& r : report.mse_table) {
      f << "  " << r.model << "  voltage " << opt(r.voltage_mse) << "  flow " << opt(r.flow_mse) << "  ("
        << r.description << ")\n";
    }
    f << "\nOPF comparison (violations verified by Newton power flow)\n";
    for (const auto& r : report.opf_table) {
      f << "  " << r.method << " [" << r.mode << "]  objective " << format_real(r.objective) << "  iterations "
        << r.iterations << (r.converged ? "" : " (max_iter)") << "  violated buses " << r.violations_before
        << " -> " << r.violations_after << '\n';
    }
  }
}

}  // namespace icnnopf
