#include "ift/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "ift/error.hpp"

namespace ift::io {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    const size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(const std::string& field, const std::string& context) {
  if (field.empty()) throw Error(ErrorKind::Data, context + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0') {
    throw Error(ErrorKind::Data, context + ": cannot parse '" + field + "' as a number");
  }
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::Data, context + ": non-finite value '" + field + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvTable read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Prerequisite, "cannot open: " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(is, line)) {
    throw Error(ErrorKind::Data, path.string() + ": empty file, expected a header row");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto& h : split_csv(line)) table.header.push_back(h);

  size_t row_no = 1;
  while (std::getline(is, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != table.header.size()) {
      throw Error(ErrorKind::Data, path.string() + " row " + std::to_string(row_no) + ": expected " +
                                       std::to_string(table.header.size()) + " columns, got " +
                                       std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) {
      row.push_back(parse_double(f, path.string() + " row " + std::to_string(row_no)));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_numeric_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Data, "cannot open for writing: " + path.string());
  for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << "\n";
  }
  if (!os) throw Error(ErrorKind::Data, "write failed: " + path.string());
}

}  // namespace ift::io
