#pragma once

#include <vector>

#include "inflatenn/metrics.hpp"

namespace inflatenn {

// Per-target training-split statistics used by the prediction repairs.
struct TargetStats {
  double label_mean = 0.0;
  double label_std = 0.0;  // population
  double pred_mean = 0.0;
};

struct DelayResult {
  int best_t = 0;  // in [-max_abs_t, max_abs_t]
  int aligned_length = 0;
  double ccc_at_best = 0.0;
};

TargetStats fit_train_stats(const std::vector<double>& train_labels,
                            const std::vector<double>& train_preds);

// y_sn = (y' - label_mean) / label_std
std::vector<double> scale_normalize(const std::vector<double>& preds, const TargetStats& stats);

// As printed: y_mf = y' - label_mean + pred_mean. The swapped variant
// (y' - pred_mean + label_mean) moves predictions onto the label mean; off by
// default.
std::vector<double> mean_filter(const std::vector<double>& preds, const TargetStats& stats,
                                bool swapped = false);

// Overlap of labels with preds shifted by t (y_td(f) = y'(f+t)), dropping
// out-of-range samples.
SeriesPair shifted_overlap(const std::vector<double>& labels, const std::vector<double>& preds,
                           int t);

// Picks the t in [-max_abs_t, max_abs_t] maximizing CCC on the overlap; ties
// break toward smaller |t|, then negative t.
DelayResult time_delay_align(const std::vector<double>& labels, const std::vector<double>& preds,
                             int max_abs_t = 10);

struct PostprocessSteps {
  bool scale_normalize = false;
  bool mean_filter = false;
  bool mean_filter_swapped = false;
  bool time_delay = false;
};

struct PostprocessResult {
  std::vector<double> preds;
  bool delay_applied = false;
  DelayResult delay;
};

// Fixed chain order: scale_normalize -> mean_filter -> time_delay_align.
PostprocessResult postprocess_chain(const std::vector<double>& labels,
                                    const std::vector<double>& preds, const TargetStats& stats,
                                    const PostprocessSteps& steps);

}  // namespace inflatenn
