#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hmmvb/error.hpp"
#include "hmmvb/model.hpp"

namespace hmmvb {

struct CsvTable {
  std::vector<std::string> header;
  RowMatrix values;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_real(std::string_view field, const std::string& where) {
  double v = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ValidationError("data", where + ": cannot parse '" + std::string(field) + "' as a number");
  return v;
}

}  // namespace detail

/// Comma-separated reals, one point per row; locale independent.
inline CsvTable parse_csv(std::istream& in, bool has_header, const std::string& name = "csv") {
  CsvTable table;
  std::vector<double> flat;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_commas(line);
    if (first && has_header) {
      for (auto f : fields) table.header.emplace_back(f);
      cols = fields.size();
      first = false;
      continue;
    }
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols)
      throw ValidationError("data", name + ":" + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                                        " fields, got " + std::to_string(fields.size()));
    for (auto f : fields) flat.push_back(detail::parse_real(f, name + ":" + std::to_string(line_no)));
    ++rows;
    first = false;
  }
  if (rows == 0) throw ValidationError("data", name + ": no data rows");
  table.values = Eigen::Map<RowMatrix>(flat.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return table;
}

inline CsvTable read_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("data", "cannot open '" + path + "'");
  return parse_csv(in, has_header, path);
}

/// Shortest round-trip decimal form.
inline std::string format_real(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_csv(std::ostream& out, const RowMatrix& values, const std::vector<std::string>& header = {}) {
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << '\n';
  }
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << format_real(values(i, j));
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const RowMatrix& values, const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw ValidationError("out", "cannot write '" + path + "'");
  write_csv(out, values, header);
}

}  // namespace hmmvb
