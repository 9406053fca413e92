#include "levisim/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace levisim {

void CsvTable::add_column(std::string name, std::vector<double> values) {
  if (!columns.empty() && values.size() != columns.front().size())
    throw std::invalid_argument("CsvTable: column length mismatch");
  headers.push_back(std::move(name));
  columns.push_back(std::move(values));
}

void CsvTable::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("CsvTable: cannot open " + path);
  for (std::size_t c = 0; c < headers.size(); ++c) {
    out << headers[c];
    out << (c + 1 == headers.size() ? '\n' : ',');
  }
  char buf[64];
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", columns[c][r]);
      out << buf << (c + 1 == columns.size() ? '\n' : ',');
    }
  }
}

CsvTable CsvTable::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("CsvTable: cannot open " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("CsvTable: empty file " + path);
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.headers.push_back(cell);
  }
  table.columns.resize(table.headers.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= table.columns.size()) throw std::runtime_error("CsvTable: ragged row in " + path);
      table.columns[c].push_back(std::strtod(cell.c_str(), nullptr));
      ++c;
    }
    if (c != table.columns.size()) throw std::runtime_error("CsvTable: ragged row in " + path);
  }
  return table;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < headers.size(); ++c) {
    if (headers[c] == name) return columns[c];
  }
  throw std::out_of_range("CsvTable: no column named " + name);
}

}  // namespace levisim
