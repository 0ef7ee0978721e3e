#pragma once

#include <string>
#include <vector>

namespace hetpure {

/// Minimal CSV support: comma separation, no quoting (fields here are
/// numbers, paths without commas, and identifiers).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  const std::string& cell(std::size_t row, const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

std::string format_double(double v);  // fixed 6-digit, deterministic

}  // namespace hetpure
