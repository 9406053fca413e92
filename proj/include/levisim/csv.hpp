#pragma once

#include <string>
#include <vector>

namespace levisim {

/// Column-oriented CSV with a single header row; values serialized with
/// round-trip precision so identical runs emit identical bytes.
struct CsvTable {
  std::vector<std::string> headers;
  std::vector<std::vector<double>> columns;

  void add_column(std::string name, std::vector<double> values);
  void write(const std::string& path) const;
  static CsvTable read(const std::string& path);

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  const std::vector<double>& column(const std::string& name) const;
};

}  // namespace levisim
