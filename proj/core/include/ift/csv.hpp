#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ift::io {

// Splits one CSV line on commas (no quoting; our formats never need it).
std::vector<std::string> split_csv(const std::string& line);

// Strict double parse; throws Error(Data) mentioning `context` on failure or
// non-finite values.
double parse_double(const std::string& field, const std::string& context);

// Round-trip-exact decimal formatting (%.17g).
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Reads a numeric CSV with a header line. Every row must have exactly
// header.size() finite fields; errors name the file and 1-based row number.
CsvTable read_numeric_csv(const std::filesystem::path& path);

// Writes header + rows with format_double; newline-terminated.
void write_numeric_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& rows);

}  // namespace ift::io
