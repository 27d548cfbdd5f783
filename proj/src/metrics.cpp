#include "calphys/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace calphys {

MetricReport metrics(const RateSeries& pred, const RateSeries& truth) {
  if (pred.t_sec.size() != pred.bpm.size() || truth.t_sec.size() != truth.bpm.size()) {
    throw Error("rate series timestamps and values differ in length");
  }
  std::map<long long, double> truth_at;
  for (std::size_t i = 0; i < truth.size(); ++i) truth_at[std::llround(truth.t_sec[i] * 1000.0)] = truth.bpm[i];

  std::vector<double> p;
  std::vector<double> q;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto it = truth_at.find(std::llround(pred.t_sec[i] * 1000.0));
    if (it == truth_at.end()) continue;
    p.push_back(pred.bpm[i]);
    q.push_back(it->second);
  }
  if (p.empty()) throw Error("no overlapping timestamps");

  MetricReport r;
  r.n = p.size();
  r.task = to_string(truth.task);
  const auto n = static_cast<double>(r.n);
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double mp = 0.0;
  double mq = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double d = p[i] - q[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    mp += p[i];
    mq += q[i];
  }
  mp /= n;
  mq /= n;
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);

  double spp = 0.0;
  double sqq = 0.0;
  double spq = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    spp += (p[i] - mp) * (p[i] - mp);
    sqq += (q[i] - mq) * (q[i] - mq);
    spq += (p[i] - mp) * (q[i] - mq);
  }
  if (sqq <= 0.0) {
    r.warnings.emplace_back("zero-variance truth: corrcoef and r2 undefined");
  } else {
    r.r2 = 1.0 - sq_sum / sqq;
    if (spp <= 0.0) {
      r.warnings.emplace_back("zero-variance prediction: corrcoef undefined");
    } else {
      r.corrcoef = std::clamp(spq / std::sqrt(spp * sqq), -1.0, 1.0);
    }
  }
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["corrcoef"] = r.corrcoef ? nlohmann::json(*r.corrcoef) : nlohmann::json(nullptr);
  j["r2"] = r.r2 ? nlohmann::json(*r.r2) : nlohmann::json(nullptr);
  j["n"] = r.n;
  j["task"] = r.task;
  j["warnings"] = r.warnings;
  return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.mae = j.at("mae").get<double>();
  r.rmse = j.at("rmse").get<double>();
  if (!j.at("corrcoef").is_null()) r.corrcoef = j.at("corrcoef").get<double>();
  if (!j.at("r2").is_null()) r.r2 = j.at("r2").get<double>();
  r.n = j.at("n").get<std::size_t>();
  r.task = j.value("task", std::string{});
  r.warnings = j.value("warnings", std::vector<std::string>{});
  return r;
}

}  // namespace calphys
