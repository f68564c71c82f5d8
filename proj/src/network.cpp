#include "icnnopf/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace icnnopf {

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }

  // Returns false when a and b were already joined.
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ',')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != ',') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_real(std::string_view s, int line_no, std::string_view field) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CaseError("line " + std::to_string(line_no) + ": malformed number for " + std::string(field) +
                    ": '" + std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view s, int line_no, std::string_view field) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CaseError("line " + std::to_string(line_no) + ": malformed integer for " + std::string(field) +
                    ": '" + std::string(s) + "'");
  }
  return v;
}

bool parse_flag(std::string_view s, int line_no, std::string_view field) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw CaseError("line " + std::to_string(line_no) + ": expected boolean for " + std::string(field));
}

std::string fmt_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string branch_name(const Branch& br, std::size_t k) {
  return "branch " + std::to_string(k + 1) + " (" + std::to_string(br.from_bus) + "-" +
         std::to_string(br.to_bus) + ")";
}

}  // namespace

std::optional<std::size_t> NetworkCase::index_of(int bus_id) const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == bus_id) return i;
  }
  return std::nullopt;
}

std::size_t NetworkCase::slack_index() const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].kind == BusKind::Slack) return i;
  }
  throw CaseError("missing slack bus");
}

std::vector<std::size_t> NetworkCase::control_buses() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].has_control) out.push_back(i);
  }
  return out;
}

std::string_view to_string(TopologyKind t) { return t == TopologyKind::Radial ? "radial" : "meshed"; }

NetworkCase parse_case_unchecked(std::string_view text) {
  enum class Section { None, Header, Buses, Branches };
  NetworkCase c;
  Section section = Section::None;
  bool saw_s_base = false, saw_v_base = false, saw_per_unit = false;
  bool p_bounds_missing_any = false;
  std::vector<bool> bounds_given;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line(raw);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto fields = split_fields(line);
    if (fields.empty()) continue;

    if (fields.size() == 1 && fields[0].front() == '[') {
      if (fields[0] == "[header]") section = Section::Header;
      else if (fields[0] == "[buses]") section = Section::Buses;
      else if (fields[0] == "[branches]") section = Section::Branches;
      else throw CaseError("line " + std::to_string(line_no) + ": unknown section " + std::string(fields[0]));
      continue;
    }

    switch (section) {
      case Section::None:
        throw CaseError("line " + std::to_string(line_no) + ": content before [header]");
      case Section::Header: {
        if (fields.size() != 2) throw CaseError("line " + std::to_string(line_no) + ": expected 'key value'");
        auto key = fields[0];
        if (key == "s_base_kva") {
          c.s_base_kva = parse_real(fields[1], line_no, key);
          saw_s_base = true;
        } else if (key == "v_base_kv") {
          c.v_base_kv = parse_real(fields[1], line_no, key);
          saw_v_base = true;
        } else if (key == "per_unit") {
          c.per_unit = parse_flag(fields[1], line_no, key);
          saw_per_unit = true;
        } else if (key == "v_slack") {
          c.v_slack = parse_real(fields[1], line_no, key);
        } else {
          throw CaseError("line " + std::to_string(line_no) + ": unknown header key " + std::string(key));
        }
        break;
      }
      case Section::Buses: {
        if (fields.size() != 7) {
          throw CaseError("line " + std::to_string(line_no) +
                          ": bus row needs 7 fields (id kind p_load q_load v_min v_max has_control)");
        }
        Bus b;
        b.id = parse_int(fields[0], line_no, "id");
        if (fields[1] == "slack") b.kind = BusKind::Slack;
        else if (fields[1] == "load") b.kind = BusKind::Load;
        else throw CaseError("line " + std::to_string(line_no) + ": bus kind must be slack or load");
        b.p_load = parse_real(fields[2], line_no, "p_load");
        b.q_load = parse_real(fields[3], line_no, "q_load");
        b.v_min = parse_real(fields[4], line_no, "v_min");
        b.v_max = parse_real(fields[5], line_no, "v_max");
        b.has_control = parse_flag(fields[6], line_no, "has_control");
        c.buses.push_back(b);
        break;
      }
      case Section::Branches: {
        if (fields.size() != 4 && fields.size() != 6) {
          throw CaseError("line " + std::to_string(line_no) +
                          ": branch row needs 4 or 6 fields (from to r x [p_min p_max])");
        }
        Branch br;
        br.from_bus = parse_int(fields[0], line_no, "from");
        br.to_bus = parse_int(fields[1], line_no, "to");
        br.r = parse_real(fields[2], line_no, "r");
        br.x = parse_real(fields[3], line_no, "x");
        if (fields.size() == 6) {
          br.p_min = parse_real(fields[4], line_no, "p_min");
          br.p_max = parse_real(fields[5], line_no, "p_max");
          bounds_given.push_back(true);
        } else {
          bounds_given.push_back(false);
          p_bounds_missing_any = true;
        }
        c.branches.push_back(br);
        break;
      }
    }
  }
  if (!saw_s_base || !saw_v_base || !saw_per_unit) {
    throw CaseError("header must define s_base_kva, v_base_kv and per_unit");
  }
  // Absent flow bounds mean +-10 pu; store them in the document's unit system.
  if (p_bounds_missing_any && !c.per_unit) {
    for (std::size_t k = 0; k < c.branches.size(); ++k) {
      if (!bounds_given[k]) {
        c.branches[k].p_min = -10.0 * c.s_base_kva;
        c.branches[k].p_max = 10.0 * c.s_base_kva;
      }
    }
  }
  return c;
}

std::vector<Diagnostic> validate_bounds(const NetworkCase& c) {
  std::vector<Diagnostic> out;
  if (!(c.s_base_kva > 0.0)) out.push_back({"header", "s_base_kva must be positive"});
  if (!(c.v_base_kv > 0.0)) out.push_back({"header", "v_base_kv must be positive"});

  std::set<int> seen;
  std::size_t slack_count = 0;
  for (const auto& b : c.buses) {
    const std::string name = "bus " + std::to_string(b.id);
    if (!seen.insert(b.id).second) out.push_back({name, "duplicate bus id"});
    if (b.kind == BusKind::Slack) ++slack_count;
    if (!(b.v_min > 0.0 && b.v_min < b.v_max)) out.push_back({name, "requires 0 < v_min < v_max"});
    if (!std::isfinite(b.p_load) || !std::isfinite(b.q_load)) out.push_back({name, "non-finite load"});
  }
  if (slack_count == 0) out.push_back({"network", "missing slack bus"});
  if (slack_count > 1) out.push_back({"network", "multiple slack buses"});

  bool endpoints_ok = true;
  for (std::size_t k = 0; k < c.branches.size(); ++k) {
    const auto& br = c.branches[k];
    const std::string name = branch_name(br, k);
    const bool from_ok = c.index_of(br.from_bus).has_value();
    const bool to_ok = c.index_of(br.to_bus).has_value();
    if (!from_ok) out.push_back({name, "references nonexistent bus " + std::to_string(br.from_bus)});
    if (!to_ok) out.push_back({name, "references nonexistent bus " + std::to_string(br.to_bus)});
    endpoints_ok = endpoints_ok && from_ok && to_ok;
    if (br.from_bus == br.to_bus) out.push_back({name, "from and to bus coincide"});
    if (!(br.r >= 0.0 && br.x > 0.0)) out.push_back({name, "non-physical impedance"});
    if (!(br.p_min < br.p_max)) out.push_back({name, "requires p_min < p_max"});
  }

  if (endpoints_ok && !c.buses.empty()) {
    DisjointSets ds(c.buses.size());
    for (const auto& br : c.branches) ds.unite(*c.index_of(br.from_bus), *c.index_of(br.to_bus));
    const auto root = ds.find(0);
    for (std::size_t i = 1; i < c.buses.size(); ++i) {
      if (ds.find(i) != root) {
        out.push_back({"network", "disconnected graph (bus " + std::to_string(c.buses[i].id) + " unreachable)"});
        break;
      }
    }
  }
  return out;
}

TopologyKind classify_topology(const NetworkCase& c) {
  if (c.branches.size() + 1 != c.buses.size()) return TopologyKind::Meshed;
  DisjointSets ds(c.buses.size());
  for (const auto& br : c.branches) {
    if (!ds.unite(*c.index_of(br.from_bus), *c.index_of(br.to_bus))) return TopologyKind::Meshed;
  }
  return TopologyKind::Radial;
}

NetworkCase to_per_unit(const NetworkCase& raw) {
  if (!(raw.s_base_kva > 0.0) || !(raw.v_base_kv > 0.0)) throw CaseError("base values must be positive");
  if (raw.per_unit) return raw;
  NetworkCase c = raw;
  // kVA / kV^2 -> 1/ohm scaling: z_base = (kV*1e3)^2 / (kVA*1e3)
  const double z_base = (raw.v_base_kv * 1e3) * (raw.v_base_kv * 1e3) / (raw.s_base_kva * 1e3);
  for (auto& b : c.buses) {
    b.p_load /= raw.s_base_kva;
    b.q_load /= raw.s_base_kva;
  }
  for (auto& br : c.branches) {
    if (br.r == 0.0 && br.x == 0.0) throw CaseError("non-physical impedance");
    br.r /= z_base;
    br.x /= z_base;
    br.p_min /= raw.s_base_kva;
    br.p_max /= raw.s_base_kva;
  }
  c.per_unit = true;
  return c;
}

NetworkCase parse_case(std::string_view text) {
  NetworkCase c = parse_case_unchecked(text);
  auto diags = validate_bounds(c);
  if (!diags.empty()) {
    std::string msg = diags.front().message;
    if (diags.front().subject != "network") msg = diags.front().subject + ": " + msg;
    throw CaseError(msg);
  }
  c = to_per_unit(c);
  c.topology = classify_topology(c);
  return c;
}

NetworkCase load_case_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CaseError("cannot open case file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_case(ss.str());
}

std::string serialize_case(const NetworkCase& c) {
  std::ostringstream o;
  o << "[header]\n";
  o << "s_base_kva " << fmt_real(c.s_base_kva) << "\n";
  o << "v_base_kv " << fmt_real(c.v_base_kv) << "\n";
  o << "per_unit " << (c.per_unit ? "true" : "false") << "\n";
  o << "v_slack " << fmt_real(c.v_slack) << "\n";
  o << "[buses]\n# id kind p_load q_load v_min v_max has_control\n";
  for (const auto& b : c.buses) {
    o << b.id << ' ' << (b.kind == BusKind::Slack ? "slack" : "load") << ' ' << fmt_real(b.p_load) << ' '
      << fmt_real(b.q_load) << ' ' << fmt_real(b.v_min) << ' ' << fmt_real(b.v_max) << ' '
      << (b.has_control ? 1 : 0) << "\n";
  }
  o << "[branches]\n# from to r x p_min p_max\n";
  for (const auto& br : c.branches) {
    o << br.from_bus << ' ' << br.to_bus << ' ' << fmt_real(br.r) << ' ' << fmt_real(br.x) << ' '
      << fmt_real(br.p_min) << ' ' << fmt_real(br.p_max) << "\n";
  }
  return o.str();
}

std::uint64_t case_hash(const NetworkCase& c) { return fnv1a64(serialize_case(c)); }

}  // namespace icnnopf
