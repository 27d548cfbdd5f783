#include "calphys/csv.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace calphys {

std::vector<double> CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw Error("CSV column '" + name + "' not found");
  const auto idx = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[idx]);
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open CSV: " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(is, line)) throw Error("empty CSV: " + path.string());
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      cell.erase(std::remove_if(cell.begin(), cell.end(), [](char c) { return c == '\r' || c == ' '; }), cell.end());
      table.columns.push_back(cell);
    }
  }
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::logic_error&) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": not a number: " + cell);
      }
    }
    if (row.size() != table.columns.size()) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open CSV for writing: " + path.string());
  for (std::size_t i = 0; i < table.columns.size(); ++i) os << (i ? "," : "") << table.columns[i];
  os << '\n' << std::setprecision(17);
  for (const auto& r : table.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
}

void write_rates_csv(const RateSeries& rates, const std::filesystem::path& path) {
  CsvTable t;
  t.columns = {"t_sec", "bpm"};
  for (std::size_t i = 0; i < rates.size(); ++i) t.rows.push_back({rates.t_sec[i], rates.bpm[i]});
  write_csv(t, path);
}

RateSeries read_rates_csv(const std::filesystem::path& path, Task task) {
  const auto t = read_csv(path);
  RateSeries r;
  r.task = task;
  r.t_sec = t.column("t_sec");
  r.bpm = t.column("bpm");
  return r;
}

}  // namespace calphys
