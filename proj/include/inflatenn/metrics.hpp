#pragma once

#include <string>
#include <vector>

#include "inflatenn/tensor.hpp"

namespace inflatenn {

struct SeriesPair {
  std::vector<double> labels;
  std::vector<double> preds;
};

struct MapeResult {
  double value = 0.0;  // percent
  int excluded = 0;
};

struct MetricReport {
  double mae = 0.0;
  double mape = 0.0;
  int mape_excluded = 0;
  double pcc = 0.0;
  double ccc = 0.0;
  int n = 0;
};

constexpr double kMapeEpsilon = 1e-3;

double compute_mae(const SeriesPair& pair);
// mean of |y'-y| / |y| over indices with |y| >= epsilon, as a percentage
MapeResult compute_mape(const SeriesPair& pair, double epsilon = kMapeEpsilon);
double compute_pcc(const SeriesPair& pair);
// 2*pcc*s_y*s_y' / (s_y^2 + s_y'^2 + (mean_y - mean_y')^2), population variances
double compute_ccc(const SeriesPair& pair);

MetricReport evaluate_series(const SeriesPair& pair, double epsilon = kMapeEpsilon);

// aligned-column text and "target,metric,value,n,excluded" CSV
std::string report_text(const std::vector<std::pair<std::string, MetricReport>>& reports);
std::string report_csv(const std::vector<std::pair<std::string, MetricReport>>& reports);

}  // namespace inflatenn
