#include "inflatenn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace inflatenn {

namespace {

void check_pair(const SeriesPair& pair, std::size_t min_n) {
  if (pair.labels.size() != pair.preds.size()) {
    throw DimensionError("series lengths differ: " + std::to_string(pair.labels.size()) + " vs " +
                         std::to_string(pair.preds.size()));
  }
  if (pair.labels.size() < min_n) {
    throw DomainError("series too short: need at least " + std::to_string(min_n) + " samples");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double compute_mae(const SeriesPair& pair) {
  check_pair(pair, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < pair.labels.size(); ++i) {
    sum += std::fabs(pair.preds[i] - pair.labels[i]);
  }
  return sum / static_cast<double>(pair.labels.size());
}

MapeResult compute_mape(const SeriesPair& pair, double epsilon) {
  check_pair(pair, 1);
  double sum = 0.0;
  int used = 0, excluded = 0;
  for (std::size_t i = 0; i < pair.labels.size(); ++i) {
    if (std::fabs(pair.labels[i]) < epsilon) {
      ++excluded;
      continue;
    }
    sum += std::fabs(pair.preds[i] - pair.labels[i]) / std::fabs(pair.labels[i]);
    ++used;
  }
  if (used == 0) {
    throw UndefinedMetricError("MAPE undefined: every label below epsilon " +
                               std::to_string(epsilon));
  }
  return {100.0 * sum / static_cast<double>(used), excluded};
}

double compute_pcc(const SeriesPair& pair) {
  check_pair(pair, 2);
  const Moments my = reduce_moments(std::span<const double>(pair.labels));
  const Moments mp = reduce_moments(std::span<const double>(pair.preds));
  if (my.var <= 0.0 || mp.var <= 0.0) {
    throw UndefinedMetricError("PCC undefined: zero variance in a series");
  }
  double cov = 0.0;
  for (std::size_t i = 0; i < pair.labels.size(); ++i) {
    cov += (pair.labels[i] - my.mean) * (pair.preds[i] - mp.mean);
  }
  cov /= static_cast<double>(pair.labels.size());
  return cov / (std::sqrt(my.var) * std::sqrt(mp.var));
}

double compute_ccc(const SeriesPair& pair) {
  check_pair(pair, 2);
  const Moments my = reduce_moments(std::span<const double>(pair.labels));
  const Moments mp = reduce_moments(std::span<const double>(pair.preds));
  if (my.var <= 0.0 || mp.var <= 0.0) {
    throw UndefinedMetricError("CCC undefined: zero variance in a series");
  }
  const double rho = compute_pcc(pair);
  const double mean_gap = my.mean - mp.mean;
  return 2.0 * rho * std::sqrt(my.var) * std::sqrt(mp.var) /
         (my.var + mp.var + mean_gap * mean_gap);
}

MetricReport evaluate_series(const SeriesPair& pair, double epsilon) {
  MetricReport report;
  report.n = static_cast<int>(pair.labels.size());
  report.mae = compute_mae(pair);
  const MapeResult mape = compute_mape(pair, epsilon);
  report.mape = mape.value;
  report.mape_excluded = mape.excluded;
  report.pcc = compute_pcc(pair);
  report.ccc = compute_ccc(pair);
  return report;
}

std::string report_text(const std::vector<std::pair<std::string, MetricReport>>& reports) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %10s %10s %10s %10s %6s %9s\n", "target", "MAE",
                "MAPE(%)", "PCC", "CCC", "n", "excluded");
  out << line;
  for (const auto& [name, r] : reports) {
    std::snprintf(line, sizeof(line), "%-10s %10.4f %10.2f %10.4f %10.4f %6d %9d\n", name.c_str(),
                  r.mae, r.mape, r.pcc, r.ccc, r.n, r.mape_excluded);
    out << line;
  }
  return out.str();
}

std::string report_csv(const std::vector<std::pair<std::string, MetricReport>>& reports) {
  std::ostringstream out;
  out << "target,metric,value,n,excluded\n";
  for (const auto& [name, r] : reports) {
    out << name << ",mae," << fmt(r.mae) << "," << r.n << ",0\n";
    out << name << ",mape," << fmt(r.mape) << "," << r.n << "," << r.mape_excluded << "\n";
    out << name << ",pcc," << fmt(r.pcc) << "," << r.n << ",0\n";
    out << name << ",ccc," << fmt(r.ccc) << "," << r.n << ",0\n";
  }
  return out.str();
}

}  // namespace inflatenn
