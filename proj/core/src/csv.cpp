#include "hetpure/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hetpure {

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

const std::string& CsvTable::cell(std::size_t row, const std::string& name) const {
  int c = column(name);
  if (c < 0) throw std::runtime_error("csv: no column '" + name + "'");
  return rows.at(row).at(static_cast<std::size_t>(c));
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path);
  CsvTable t;
  std::string line;
  int lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    if (!s.empty() && s.back() == ',') out.push_back("");
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = fields;
    } else {
      if (fields.size() != t.header.size())
        throw std::runtime_error("read_csv: " + path + " line " +
                                 std::to_string(lineno) + ": expected " +
                                 std::to_string(t.header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  auto join = [&](const std::vector<std::string>& fields) {
    std::string s;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) s += ',';
      s += fields[i];
    }
    return s;
  };
  out << join(table.header) << '\n';
  for (const auto& row : table.rows) out << join(row) << '\n';
  if (!out) throw std::runtime_error("write_csv: write failed: " + path);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace hetpure
