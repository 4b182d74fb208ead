#pragma once

// Per-step state records and their text dump:
//
//   # key=value            metadata, one per line
//   step col0 col1 ...     header
//   0 0.5 1 ...            one row per step, values printed with %.17g

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sgp/error.hpp"

namespace sgp {

struct TrajectoryRecord {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t steps() const { return rows.size(); }

  void add_row(std::vector<double> row) {
    require_shape(row.size() == columns.size(), "trajectory row width does not match columns");
    rows.push_back(std::move(row));
  }

  std::optional<std::size_t> column_index(const std::string& name) const {
    const auto it = std::ranges::find(columns, name);
    if (it == columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns.begin());
  }

  std::vector<double> column(const std::string& name) const {
    const auto idx = column_index(name);
    if (!idx) throw ShapeError("no trajectory column '" + name + "'");
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[*idx]);
    return out;
  }
};

struct TrajectoryTolerances {
  double default_tolerance = 0.0;
  std::map<std::string, double> per_column;

  double for_column(const std::string& c) const {
    const auto it = per_column.find(c);
    return it == per_column.end() ? default_tolerance : it->second;
  }
};

struct DivergenceReport {
  std::map<std::string, double> max_abs_deviation;
  std::optional<std::size_t> first_divergence;  // first step where any column exceeds its tolerance
  bool pass = true;
};

inline DivergenceReport compare_trajectories(const TrajectoryRecord& a, const TrajectoryRecord& b,
                                             const TrajectoryTolerances& tol = {}) {
  if (a.columns != b.columns) throw ShapeError("trajectories have different columns");
  if (a.steps() != b.steps()) throw ShapeError("trajectories have different lengths");
  DivergenceReport rep;
  for (const auto& c : a.columns) rep.max_abs_deviation[c] = 0.0;
  for (std::size_t n = 0; n < a.steps(); ++n) {
    for (std::size_t k = 0; k < a.columns.size(); ++k) {
      const double x = a.rows[n][k], y = b.rows[n][k];
      const double dev = (std::isnan(x) && std::isnan(y)) ? 0.0 : std::abs(x - y);
      double& worst = rep.max_abs_deviation[a.columns[k]];
      if (!(dev <= worst)) worst = dev;
      if (!(dev <= tol.for_column(a.columns[k]))) {
        rep.pass = false;
        if (!rep.first_divergence) rep.first_divergence = n;
      }
    }
  }
  return rep;
}

inline void write_trajectory(std::ostream& out, const TrajectoryRecord& t) {
  for (const auto& [k, v] : t.metadata) out << "# " << k << '=' << v << '\n';
  out << "step";
  for (const auto& c : t.columns) out << ' ' << c;
  out << '\n';
  char buf[40];
  for (std::size_t n = 0; n < t.rows.size(); ++n) {
    out << n;
    for (double v : t.rows[n]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ' ' << buf;
    }
    out << '\n';
  }
}

inline TrajectoryRecord read_trajectory(std::istream& in) {
  TrajectoryRecord t;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("line " + std::to_string(line_no) + ": malformed metadata");
      t.metadata.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    std::istringstream fields(line);
    if (!have_header) {
      std::string word;
      fields >> word;
      if (word != "step") throw DataError("line " + std::to_string(line_no) + ": expected 'step' header");
      while (fields >> word) t.columns.push_back(word);
      have_header = true;
      continue;
    }
    std::size_t step = 0;
    if (!(fields >> step) || step != t.rows.size())
      throw DataError("line " + std::to_string(line_no) + ": bad step index");
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) row.push_back(std::strtod(tok.c_str(), nullptr));
    if (row.size() != t.columns.size()) throw DataError("line " + std::to_string(line_no) + ": wrong column count");
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace sgp
