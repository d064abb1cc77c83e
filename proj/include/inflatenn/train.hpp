#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inflatenn/inflate.hpp"
#include "inflatenn/model.hpp"
#include "inflatenn/postprocess.hpp"
#include "inflatenn/tensor.hpp"

namespace inflatenn {

enum class LossKind { Mse, WeightedCrossEntropy };

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 16;  // 8 for i3d runs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  LossKind loss = LossKind::Mse;
  int epochs = 10;
  std::uint64_t seed = 0;
  std::vector<double> class_weights;  // empty = unweighted
  std::optional<GradientMask> gradient_mask;
  double target_multiplier = 1.0;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t step = 0;
};

template <typename T>
struct LossGradT {
  double loss = 0.0;
  TensorT<T> grad;
};

using LossGrad = LossGradT<float>;

// mean over all elements; grad = 2*(preds-targets)/count
template <typename T>
LossGradT<T> mse_loss(const TensorT<T>& preds, const TensorT<T>& targets);

// softmax cross-entropy over the last axis, each sample's loss scaled by
// weights[class]; batch mean for rank-2 logits. grad is w.r.t. the logits.
template <typename T>
LossGradT<T> weighted_ce_loss(const TensorT<T>& logits, std::span<const int> class_indices,
                              std::span<const double> weights);

// w_c = N / (K * n_c): inverse frequency, so expected per-class mass is equal
std::vector<double> class_weights_from_counts(std::span<const std::int64_t> counts);

// Standard Adam with bias correction; entries with mask 0 receive no update
// and accumulate no moments. The step counter advances once per call.
void adam_step(std::map<std::string, Tensor>& params, const GradMap& grads, AdamState& state,
               const TrainConfig& cfg, const GradientMask* mask);

// One training example. Regression reads (valence, arousal); classification
// reads class_index. Input layout must match the model (frame [C,H,W],
// cascade clip [T,C,H,W], i3d clip [C,T,H,W]).
struct Sample {
  Tensor input;
  float valence = 0.0f;
  float arousal = 0.0f;
  int class_index = -1;
};

struct LogRow {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double ccc_valence = 0.0;  // NaN when undefined (train rows, classification)
  double ccc_arousal = 0.0;
};

struct FitResult {
  std::vector<LogRow> log;
  std::map<std::string, Tensor> best_weights;
  int best_epoch = 0;
  double best_score = 0.0;
  bool has_stats = false;
  TargetStats valence_stats;  // train-split stats under the best weights
  TargetStats arousal_stats;
};

struct Predictions {
  std::vector<double> valence;
  std::vector<double> arousal;
};

// Epoch loop with seeded shuffling, target scaling by cfg.target_multiplier,
// Adam updates honoring the gradient mask, per-epoch validation and
// best-by-validation-CCC checkpointing (best-by-loss for classification).
// The model is left at the best weights.
FitResult fit(ModelSpec& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& cfg);

// Eval-mode predictions in sample order, unscaled by cfg.target_multiplier.
Predictions predict(ModelSpec& model, const std::vector<Sample>& samples, const TrainConfig& cfg);

std::string log_csv(const std::vector<LogRow>& log);

}  // namespace inflatenn
