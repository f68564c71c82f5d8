#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "icnnopf/types.hpp"

namespace icnnopf {

enum class BusKind { Slack, Load };
enum class TopologyKind { Radial, Meshed };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::Load;
  double p_load = 0.0;  // consumed real power
  double q_load = 0.0;  // consumed reactive power
  double v_min = 0.95;
  double v_max = 1.05;
  bool has_control = false;

  bool operator==(const Bus&) const = default;
};

/// Series branch. Flow bounds refer to sending-end (from-bus) real power.
struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double p_min = -10.0;
  double p_max = 10.0;

  bool operator==(const Branch&) const = default;
};

/// Balanced single-phase distribution network.
///
/// Bus and branch order follows the case document. After `parse_case` /
/// `to_per_unit` every quantity is per-unit and `per_unit` is true; a case
/// read with `per_unit = false` holds kW / kvar / ohm values until converted.
struct NetworkCase {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  double s_base_kva = 1000.0;
  double v_base_kv = 12.66;
  double v_slack = 1.0;
  bool per_unit = true;
  TopologyKind topology = TopologyKind::Radial;

  std::size_t bus_count() const { return buses.size(); }
  std::size_t branch_count() const { return branches.size(); }

  /// Position of the bus with the given id, if present.
  std::optional<std::size_t> index_of(int bus_id) const;
  std::size_t slack_index() const;
  /// Positions of buses flagged with a controllable device, in bus order.
  std::vector<std::size_t> control_buses() const;

  bool operator==(const NetworkCase&) const = default;
};

/// One validation finding; `subject` names the offending bus or branch.
struct Diagnostic {
  std::string subject;
  std::string message;
};

/// Reads a case document without semantic checks (syntax errors still throw).
NetworkCase parse_case_unchecked(std::string_view text);

/// Reads and fully validates a case document. Physical-unit documents are
/// converted to per-unit. Throws CaseError on any invariant violation.
NetworkCase parse_case(std::string_view text);

NetworkCase load_case_file(const std::string& path);

/// Writes the document form; `parse_case(serialize_case(c)) == c`.
std::string serialize_case(const NetworkCase& c);

/// Divides loads and flow bounds by s_base and impedances by v_base^2/s_base.
/// Identity on a case already flagged per-unit.
NetworkCase to_per_unit(const NetworkCase& raw);

/// Bound and connectivity findings; empty when the case is sound.
std::vector<Diagnostic> validate_bounds(const NetworkCase& c);

/// Radial iff the branches form a spanning tree. Assumes a connected case.
TopologyKind classify_topology(const NetworkCase& c);

std::uint64_t case_hash(const NetworkCase& c);

std::string_view to_string(TopologyKind t);

}  // namespace icnnopf
