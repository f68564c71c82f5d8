#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "icnnopf/opf.hpp"

namespace icnnopf {

struct BeforeAfterRow {
  int bus_id = 0;
  double delta_v = 0.0;
  double v_dev_before = 0.0;     // Newton, no control
  double v_dev_predicted = 0.0;  // surrogate, no control
  double v_dev_after = 0.0;      // Newton, at the OPF controls
  std::string oracle = "newton";
};

/// One line per OPF method in the comparison.
struct OpfSummaryRow {
  std::string method;
  std::string mode;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  int violations_before = 0;
  int violations_after = 0;
  double worst_excess_after = 0.0;
};

struct ExperimentReport {
  std::vector<MseRow> mse_table;
  std::vector<BeforeAfterRow> before_after;
  std::vector<std::string> trace_devices;      // column labels
  std::vector<std::vector<double>> convergence_trace;  // iter-major control values, z^0 first
  std::vector<OpfSummaryRow> opf_table;
  std::vector<std::pair<std::string, std::string>> config_echo;
};

std::vector<BeforeAfterRow> before_after_rows(const NetworkCase& c, const OpfOutcome& outcome);
OpfSummaryRow summarize(const OpfOutcome& outcome);

/// Per-iteration device setpoints of a solve that recorded its trajectory.
void fill_convergence_trace(ExperimentReport& report, const NetworkCase& c, const ControlLayout& layout,
                            const SolveResult& solve);

/// Fixed-format real used in every emitted table.
std::string format_real(double v);

/// Solver diagnostics: iter, objective, max_surrogate_violation, step_norm, lambda_max.
void write_trace_csv(const SolveResult& solve, std::ostream& out);

void write_mse_table(const std::vector<MseRow>& rows, std::ostream& out);
void write_opf_table(const std::vector<OpfSummaryRow>& rows, std::ostream& out);

/// Writes mse_table.csv, before_after.csv, convergence_trace.csv, opf_table.csv
/// and summary.txt into out_dir (created if missing).
void emit_report(const ExperimentReport& report, const std::string& out_dir);

}  // namespace icnnopf
