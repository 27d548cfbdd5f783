#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calphys/types.hpp"

namespace calphys {

/// Agreement between predicted and reference rate series (bpm).
struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> corrcoef;  // null when either side has zero variance
  std::optional<double> r2;        // null when the reference has zero variance
  std::size_t n = 0;
  std::string task;
  std::vector<std::string> warnings;

  bool operator==(const MetricReport&) const = default;
};

/// Inner join on t_sec (matched to the millisecond), then MAE, RMSE, Pearson
/// correlation and the coefficient of determination 1 - SS_res / SS_tot.
MetricReport metrics(const RateSeries& pred, const RateSeries& truth);

nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace calphys
