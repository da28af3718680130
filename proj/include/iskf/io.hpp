#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "iskf/errors.hpp"
#include "iskf/sim.hpp"

namespace iskf {

/// %.17g round-trips every finite double exactly through strtod. Infinities
/// print as "inf"/"-inf", which parse_double accepts back, so emitted files
/// are re-readable without loss.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  while (end != nullptr && *end == ' ') {
    ++end;
  }
  if (end == begin || end == nullptr || *end != '\0') {
    throw ConfigError("not a number: '" + s + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Comma-separated text with one header row. Fields are never quoted; writers
/// in this library only emit numbers and bare identifiers.
inline void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open for writing: " + path);
  }
  const auto write_row = [&out](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) {
        out << ',';
      }
      out << row[i];
    }
    out << '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) {
    write_row(row);
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open for reading: " + path);
  }
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    auto fields = split_csv_line(line);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) {
        throw ConfigError("ragged row in " + path);
      }
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) {
    throw ConfigError("empty table: " + path);
  }
  return table;
}

/// One row per time index: t, state components, measurement components,
/// outlier flags. Row t=0 holds the initial state; its measurement and flag
/// columns are nan (there is no y_0). The seed is not part of this format;
/// runs that need it record it in their manifest.
inline void write_trajectory_csv(const std::string& path,
                                 const Trajectory& traj) {
  if (traj.states.empty()) {
    throw EmptyInput("write_trajectory_csv: empty trajectory");
  }
  const auto n = traj.states[0].size();
  const auto p = traj.measurements.empty() ? 0 : traj.measurements[0].size();
  CsvTable table;
  table.header.emplace_back("t");
  for (Eigen::Index i = 0; i < n; ++i) {
    table.header.push_back("x" + std::to_string(i));
  }
  for (Eigen::Index i = 0; i < p; ++i) {
    table.header.push_back("y" + std::to_string(i));
  }
  table.header.emplace_back("proc_outlier");
  table.header.emplace_back("meas_outlier");
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    std::vector<std::string> row;
    row.push_back(std::to_string(t));
    for (Eigen::Index i = 0; i < n; ++i) {
      row.push_back(format_double(traj.states[t](i)));
    }
    if (t == 0) {
      for (Eigen::Index i = 0; i < p; ++i) {
        row.emplace_back("nan");
      }
      row.emplace_back("nan");
      row.emplace_back("nan");
    } else {
      for (Eigen::Index i = 0; i < p; ++i) {
        row.push_back(format_double(traj.measurements[t - 1](i)));
      }
      row.push_back(traj.process_outlier_flags[t - 1] ? "1" : "0");
      row.push_back(traj.meas_outlier_flags[t - 1] ? "1" : "0");
    }
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

/// Inverse of write_trajectory_csv. The seed field is not stored in the file
/// and comes back as 0.
inline Trajectory read_trajectory_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  for (const auto& name : table.header) {
    if (name.size() >= 2 && name[0] == 'x') {
      ++n;
    } else if (name.size() >= 2 && name[0] == 'y') {
      ++p;
    }
  }
  if (n == 0 || table.header.size() !=
                    static_cast<std::size_t>(1 + n + p + 2)) {
    throw ConfigError("unrecognized trajectory header in " + path);
  }
  if (table.rows.empty()) {
    throw ConfigError("trajectory has no rows: " + path);
  }
  Trajectory traj;
  traj.seed = 0;
  for (std::size_t t = 0; t < table.rows.size(); ++t) {
    const auto& row = table.rows[t];
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i) = parse_double(row[1 + i]);
    }
    traj.states.push_back(std::move(x));
    if (t > 0) {
      Eigen::VectorXd y(p);
      for (Eigen::Index i = 0; i < p; ++i) {
        y(i) = parse_double(row[1 + n + i]);
      }
      traj.measurements.push_back(std::move(y));
      traj.process_outlier_flags.push_back(parse_double(row[1 + n + p]) !=
                                           0.0);
      traj.meas_outlier_flags.push_back(parse_double(row[1 + n + p + 1]) !=
                                        0.0);
    }
  }
  return traj;
}

/// Per-step filter trace: t, posterior estimate components, and (when truth
/// is supplied) the estimation error norm. Backs error-versus-time plots.
inline void write_trace_csv(const std::string& path,
                            const std::vector<Eigen::VectorXd>& estimates,
                            const std::vector<Eigen::VectorXd>& truth = {}) {
  if (estimates.empty()) {
    throw EmptyInput("write_trace_csv: empty estimate sequence");
  }
  if (!truth.empty() && truth.size() != estimates.size()) {
    throw DimensionMismatch("write_trace_csv: truth length mismatch");
  }
  const auto n = estimates[0].size();
  CsvTable table;
  table.header.emplace_back("t");
  for (Eigen::Index i = 0; i < n; ++i) {
    table.header.push_back("xhat" + std::to_string(i));
  }
  if (!truth.empty()) {
    table.header.emplace_back("err_norm");
  }
  for (std::size_t t = 0; t < estimates.size(); ++t) {
    std::vector<std::string> row;
    row.push_back(std::to_string(t));
    for (Eigen::Index i = 0; i < n; ++i) {
      row.push_back(format_double(estimates[t](i)));
    }
    if (!truth.empty()) {
      row.push_back(format_double((truth[t] - estimates[t]).norm()));
    }
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

}  // namespace iskf
