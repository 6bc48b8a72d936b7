#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lfmpc/common.hpp"

namespace lfmpc::csv {

// Timestamped table: header "timestamp,<name>,...", ISO-8601 stamps, empty
// cells for missing values. In memory the rows live on a dense fixed grid;
// gaps in the file become NaN rows.
struct Table {
  std::vector<double> times;          // hours, dense grid
  Mat values;                         // rows x columns, NaN = missing
  std::vector<std::string> columns;   // without the timestamp column
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_cell(const std::string& cell, size_t line_no) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": unparseable value '" + cell + "'");
  }
  if (pos != cell.size())
    throw DataError("line " + std::to_string(line_no) + ": unparseable value '" + cell + "'");
  return v;
}

// Shortest decimal form that round-trips; keeps re-emitted files identical.
inline std::string format_value(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

}  // namespace detail

inline Table read_table(const std::string& path, double dt = kStepHours) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "': empty file");
  auto header = detail::split_line(line);
  if (header.empty() || header[0] != "timestamp")
    throw DataError("'" + path + "': first header column must be 'timestamp'");
  if (header.size() < 2) throw DataError("'" + path + "': no value columns");

  Table t;
  t.columns.assign(header.begin() + 1, header.end());
  const size_t ncol = t.columns.size();

  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_line(line);
    if (cells.size() != ncol + 1)
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ": expected " +
                      std::to_string(ncol + 1) + " cells, got " + std::to_string(cells.size()));
    double ts;
    try {
      ts = parse_timestamp(cells[0]);
    } catch (const DataError& e) {
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!times.empty() && !(ts > times.back()))
      throw DataError("'" + path + "' line " + std::to_string(line_no) +
                      ": timestamps not strictly increasing");
    times.push_back(ts);
    std::vector<double> row(ncol);
    for (size_t c = 0; c < ncol; ++c) row[c] = detail::parse_cell(cells[c + 1], line_no);
    rows.push_back(std::move(row));
  }
  if (times.empty()) throw DataError("'" + path + "': no data rows");

  // Snap onto the dense grid; gaps become missing rows.
  const double t0 = times.front();
  long n_slots = 0;
  std::vector<long> slots(times.size());
  for (size_t i = 0; i < times.size(); ++i) {
    double raw = (times[i] - t0) / dt;
    long k = std::lround(raw);
    if (std::abs(raw - static_cast<double>(k)) > 1e-6)
      throw DataError("'" + path + "': timestamp " + format_timestamp(times[i]) +
                      " is off the " + std::to_string(dt) + " h grid");
    slots[i] = k;
    n_slots = std::max(n_slots, k + 1);
  }

  t.times.resize(static_cast<size_t>(n_slots));
  for (long k = 0; k < n_slots; ++k)
    t.times[static_cast<size_t>(k)] = t0 + static_cast<double>(k) * dt;
  t.values = Mat::Constant(n_slots, static_cast<Eigen::Index>(ncol),
                           std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < slots.size(); ++i)
    for (size_t c = 0; c < ncol; ++c)
      t.values(slots[i], static_cast<Eigen::Index>(c)) = rows[i][c];
  return t;
}

inline void write_table(const std::string& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "timestamp";
  for (const auto& c : t.columns) out << ',' << c;
  out << '\n';
  for (size_t i = 0; i < t.times.size(); ++i) {
    out << format_timestamp(t.times[i]);
    for (Eigen::Index c = 0; c < t.values.cols(); ++c)
      out << ',' << detail::format_value(t.values(static_cast<Eigen::Index>(i), c));
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace lfmpc::csv
