#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "calphys/types.hpp"

namespace calphys {

/// Rate CSV: header `t_sec,bpm`.
void write_rates_csv(const RateSeries& rates, const std::filesystem::path& path);
RateSeries read_rates_csv(const std::filesystem::path& path, Task task = Task::HR);

/// Numeric table with a header row.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::vector<double> column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const CsvTable& table, const std::filesystem::path& path);

}  // namespace calphys
