#include "inflatenn/postprocess.hpp"

#include <cmath>

namespace inflatenn {

TargetStats fit_train_stats(const std::vector<double>& train_labels,
                            const std::vector<double>& train_preds) {
  if (train_labels.empty() || train_preds.empty()) {
    throw DomainError("train stats need non-empty label and prediction series");
  }
  const Moments ml = reduce_moments(std::span<const double>(train_labels));
  if (ml.var <= 0.0) {
    throw DegenerateStatsError("train labels have zero variance; scale normalization undefined");
  }
  const Moments mp = reduce_moments(std::span<const double>(train_preds));
  return {ml.mean, std::sqrt(ml.var), mp.mean};
}

std::vector<double> scale_normalize(const std::vector<double>& preds, const TargetStats& stats) {
  if (stats.label_std <= 0.0) throw DegenerateStatsError("scale_normalize with non-positive std");
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out[i] = (preds[i] - stats.label_mean) / stats.label_std;
  }
  return out;
}

std::vector<double> mean_filter(const std::vector<double>& preds, const TargetStats& stats,
                                bool swapped) {
  const double shift = swapped ? (stats.label_mean - stats.pred_mean)
                               : (stats.pred_mean - stats.label_mean);
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out[i] = preds[i] + shift;
  return out;
}

SeriesPair shifted_overlap(const std::vector<double>& labels, const std::vector<double>& preds,
                           int t) {
  if (labels.size() != preds.size()) {
    throw DimensionError("label and prediction series lengths differ");
  }
  const int n = static_cast<int>(labels.size());
  SeriesPair pair;
  for (int f = 0; f < n; ++f) {
    const int src = f + t;
    if (src < 0 || src >= n) continue;
    pair.labels.push_back(labels[static_cast<std::size_t>(f)]);
    pair.preds.push_back(preds[static_cast<std::size_t>(src)]);
  }
  return pair;
}

DelayResult time_delay_align(const std::vector<double>& labels, const std::vector<double>& preds,
                             int max_abs_t) {
  if (labels.size() != preds.size()) {
    throw DimensionError("label and prediction series lengths differ");
  }
  if (static_cast<int>(labels.size()) <= 2 * max_abs_t) {
    throw DomainError("series of length " + std::to_string(labels.size()) +
                      " too short for delay search up to " + std::to_string(max_abs_t));
  }
  DelayResult best;
  bool have = false;
  for (int mag = 0; mag <= max_abs_t; ++mag) {
    for (int sign = -1; sign <= 1; sign += 2) {
      if (mag == 0 && sign > 0) continue;  // t = 0 once
      const int t = mag == 0 ? 0 : sign * mag;
      const SeriesPair pair = shifted_overlap(labels, preds, t);
      double ccc;
      try {
        ccc = compute_ccc(pair);
      } catch (const UndefinedMetricError&) {
        continue;
      }
      // scan order (0, -1, +1, -2, ...) makes strict > the tie rule
      if (!have || ccc > best.ccc_at_best) {
        best.best_t = t;
        best.aligned_length = static_cast<int>(pair.labels.size());
        best.ccc_at_best = ccc;
        have = true;
      }
    }
  }
  if (!have) {
    throw UndefinedMetricError("time delay undefined: every shift gave a degenerate overlap");
  }
  return best;
}

PostprocessResult postprocess_chain(const std::vector<double>& labels,
                                    const std::vector<double>& preds, const TargetStats& stats,
                                    const PostprocessSteps& steps) {
  PostprocessResult result;
  result.preds = preds;
  if (steps.scale_normalize) result.preds = scale_normalize(result.preds, stats);
  if (steps.mean_filter) result.preds = mean_filter(result.preds, stats, steps.mean_filter_swapped);
  if (steps.time_delay) {
    result.delay = time_delay_align(labels, result.preds);
    const SeriesPair aligned = shifted_overlap(labels, result.preds, result.delay.best_t);
    result.preds = aligned.preds;
    result.delay_applied = true;
  }
  return result;
}

}  // namespace inflatenn
