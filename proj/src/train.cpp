#include "inflatenn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "inflatenn/metrics.hpp"

namespace inflatenn {

template <typename T>
LossGradT<T> mse_loss(const TensorT<T>& preds, const TensorT<T>& targets) {
  if (!preds.same_shape(targets)) {
    throw DimensionError("mse_loss shape mismatch: " + shape_str(preds.shape()) + " vs " +
                         shape_str(targets.shape()));
  }
  const double count = static_cast<double>(preds.size());
  double sum = 0.0;
  LossGradT<T> out;
  out.grad = TensorT<T>(preds.shape());
  for (std::int64_t i = 0; i < preds.size(); ++i) {
    const double d = static_cast<double>(preds[i]) - static_cast<double>(targets[i]);
    sum += d * d;
    out.grad[i] = static_cast<T>(2.0 * d / count);
  }
  out.loss = sum / count;
  return out;
}

template <typename T>
LossGradT<T> weighted_ce_loss(const TensorT<T>& logits, std::span<const int> class_indices,
                              std::span<const double> weights) {
  const bool batched = logits.rank() == 2;
  if (!batched && logits.rank() != 1) {
    throw DimensionError("weighted_ce_loss expects rank-1 or rank-2 logits");
  }
  const int n = batched ? logits.extent(0) : 1;
  const int k = batched ? logits.extent(1) : logits.extent(0);
  if (static_cast<int>(class_indices.size()) != n) {
    throw DimensionError("weighted_ce_loss got " + std::to_string(class_indices.size()) +
                         " class indices for " + std::to_string(n) + " rows");
  }
  if (!weights.empty() && static_cast<int>(weights.size()) != k) {
    throw DimensionError("class weight vector length " + std::to_string(weights.size()) +
                         " does not match " + std::to_string(k) + " classes");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw DomainError("class weights must be positive");
  }

  LossGradT<T> out;
  out.grad = TensorT<T>(logits.shape());
  double total = 0.0;
  for (int row = 0; row < n; ++row) {
    const int cls = class_indices[static_cast<std::size_t>(row)];
    if (cls < 0 || cls >= k) {
      throw DomainError("class index " + std::to_string(cls) + " out of range [0," +
                        std::to_string(k) + ")");
    }
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(cls)];
    const T* src = logits.data() + static_cast<std::int64_t>(row) * k;
    double mx = static_cast<double>(src[0]);
    for (int i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(src[i]));
    double denom = 0.0;
    for (int i = 0; i < k; ++i) denom += std::exp(static_cast<double>(src[i]) - mx);
    const double log_denom = std::log(denom) + mx;
    total += w * (log_denom - static_cast<double>(src[cls]));
    T* dst = out.grad.data() + static_cast<std::int64_t>(row) * k;
    for (int i = 0; i < k; ++i) {
      const double p = std::exp(static_cast<double>(src[i]) - mx) / denom;
      const double onehot = i == cls ? 1.0 : 0.0;
      dst[i] = static_cast<T>(w * (p - onehot) / static_cast<double>(n));
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

std::vector<double> class_weights_from_counts(std::span<const std::int64_t> counts) {
  const double k = static_cast<double>(counts.size());
  double total = 0.0;
  for (std::int64_t c : counts) {
    if (c < 1) throw DomainError("class counts must be at least 1");
    total += static_cast<double>(c);
  }
  std::vector<double> weights(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    weights[i] = total / (k * static_cast<double>(counts[i]));
  }
  return weights;
}

void adam_step(std::map<std::string, Tensor>& params, const GradMap& grads, AdamState& state,
               const TrainConfig& cfg, const GradientMask* mask) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [key, grad] : grads) {
    auto pit = params.find(key);
    if (pit == params.end()) {
      throw StateError("adam_step: gradient for unknown parameter '" + key + "'");
    }
    Tensor& p = pit->second;
    if (!p.same_shape(grad)) {
      throw DimensionError("adam_step: parameter '" + key + "' shape " + shape_str(p.shape()) +
                           " vs gradient " + shape_str(grad.shape()));
    }
    Tensor& m = state.m.try_emplace(key, Tensor(p.shape())).first->second;
    Tensor& v = state.v.try_emplace(key, Tensor(p.shape())).first->second;
    const Tensor* mk = nullptr;
    if (mask) {
      auto mit = mask->masks.find(key);
      if (mit != mask->masks.end()) mk = &mit->second;
    }
    for (std::int64_t i = 0; i < p.size(); ++i) {
      if (mk && (*mk)[i] == 0.0f) continue;
      const double g = static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update =
          cfg.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_epsilon);
      p[i] = static_cast<float>(static_cast<double>(p[i]) - update);
    }
  }
}

namespace {

Tensor stack_inputs(const std::vector<Sample>& samples, std::span<const int> indices) {
  const Tensor& first = samples[static_cast<std::size_t>(indices[0])].input;
  std::vector<int> shape = {static_cast<int>(indices.size())};
  for (int e : first.shape()) shape.push_back(e);
  Tensor batch(shape);
  const std::int64_t item = first.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& src = samples[static_cast<std::size_t>(indices[i])].input;
    if (src.size() != item) {
      throw DimensionError("samples in a batch must share one input shape");
    }
    std::copy_n(src.data(), static_cast<std::size_t>(item),
                batch.data() + static_cast<std::int64_t>(i) * item);
  }
  return batch;
}

Tensor stack_targets(const std::vector<Sample>& samples, std::span<const int> indices,
                     double multiplier) {
  Tensor targets({static_cast<int>(indices.size()), 2});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = samples[static_cast<std::size_t>(indices[i])];
    targets[static_cast<std::int64_t>(i) * 2] = static_cast<float>(s.valence * multiplier);
    targets[static_cast<std::int64_t>(i) * 2 + 1] = static_cast<float>(s.arousal * multiplier);
  }
  return targets;
}

std::vector<int> batch_classes(const std::vector<Sample>& samples, std::span<const int> indices) {
  std::vector<int> classes(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    classes[i] = samples[static_cast<std::size_t>(indices[i])].class_index;
  }
  return classes;
}

// Loss and output-gradient for one batch; classification models end in a
// softmax layer, so the CE gradient is taken w.r.t. probabilities and flows
// back through it (identical to softmax-CE on the logits).
LossGrad batch_loss(const Tensor& out, const std::vector<Sample>& samples,
                    std::span<const int> indices, const TrainConfig& cfg) {
  if (cfg.loss == LossKind::Mse) {
    return mse_loss(out, stack_targets(samples, indices, cfg.target_multiplier));
  }
  const std::vector<int> classes = batch_classes(samples, indices);
  const int n = out.extent(0), k = out.extent(1);
  LossGrad lg;
  lg.grad = Tensor(out.shape());
  double total = 0.0;
  for (int row = 0; row < n; ++row) {
    const int cls = classes[static_cast<std::size_t>(row)];
    if (cls < 0 || cls >= k) {
      throw DomainError("class index " + std::to_string(cls) + " out of range [0," +
                        std::to_string(k) + ")");
    }
    const double w = cfg.class_weights.empty() ? 1.0 : cfg.class_weights[static_cast<std::size_t>(cls)];
    const double p = static_cast<double>(out[static_cast<std::int64_t>(row) * k + cls]);
    total += -w * std::log(std::max(p, 1e-30));
    lg.grad[static_cast<std::int64_t>(row) * k + cls] =
        static_cast<float>(-w / std::max(p, 1e-30) / static_cast<double>(n));
  }
  lg.loss = total / static_cast<double>(n);
  return lg;
}

struct EvalOutcome {
  double loss = 0.0;
  double ccc_valence = std::numeric_limits<double>::quiet_NaN();
  double ccc_arousal = std::numeric_limits<double>::quiet_NaN();
};

EvalOutcome evaluate_split(ModelSpec& model, const std::vector<Sample>& samples,
                           const TrainConfig& cfg, RngStream& rng) {
  EvalOutcome outcome;
  double loss_sum = 0.0;
  std::int64_t loss_batches = 0;
  SeriesPair valence, arousal;
  const int n = static_cast<int>(samples.size());
  for (int start = 0; start < n; start += cfg.batch_size) {
    std::vector<int> indices;
    for (int i = start; i < std::min(n, start + cfg.batch_size); ++i) indices.push_back(i);
    Tensor batch = stack_inputs(samples, indices);
    Tensor out = model_forward(model, batch, false, rng, nullptr);
    const LossGrad lg = batch_loss(out, samples, indices, cfg);
    loss_sum += lg.loss;
    ++loss_batches;
    if (cfg.loss == LossKind::Mse) {
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = samples[static_cast<std::size_t>(indices[i])];
        valence.labels.push_back(s.valence);
        arousal.labels.push_back(s.arousal);
        valence.preds.push_back(static_cast<double>(out[static_cast<std::int64_t>(i) * 2]) /
                                cfg.target_multiplier);
        arousal.preds.push_back(static_cast<double>(out[static_cast<std::int64_t>(i) * 2 + 1]) /
                                cfg.target_multiplier);
      }
    }
  }
  outcome.loss = loss_sum / static_cast<double>(loss_batches);
  if (cfg.loss == LossKind::Mse) {
    try {
      outcome.ccc_valence = compute_ccc(valence);
    } catch (const UndefinedMetricError&) {
    }
    try {
      outcome.ccc_arousal = compute_ccc(arousal);
    } catch (const UndefinedMetricError&) {
    }
  }
  return outcome;
}

}  // namespace

FitResult fit(ModelSpec& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& cfg) {
  if (train.empty() || val.empty()) throw DomainError("fit needs non-empty train and val splits");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(cfg.target_multiplier > 0.0)) throw ConfigError("target multiplier must be positive");

  RngStream rng(cfg.seed);
  AdamState state;
  const GradientMask* mask = cfg.gradient_mask ? &*cfg.gradient_mask : nullptr;

  FitResult result;
  result.best_score = -std::numeric_limits<double>::infinity();
  result.best_weights = model.weights;

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::int64_t batches = 0;
    const int n = static_cast<int>(train.size());
    for (int start = 0; start < n; start += cfg.batch_size) {
      std::vector<int> indices(order.begin() + start,
                               order.begin() + std::min(n, start + cfg.batch_size));
      Tensor batch = stack_inputs(train, indices);
      ForwardTrace trace;
      Tensor out = model_forward(model, batch, true, rng, &trace);
      const LossGrad lg = batch_loss(out, train, indices, cfg);
      if (!std::isfinite(lg.loss)) {
        throw DomainError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batches) + " (first sample index " +
                          std::to_string(indices[0]) + ")");
      }
      const GradMap grads = model_backward(model, trace, lg.grad);
      adam_step(model.weights, grads, state, cfg, mask);
      loss_sum += lg.loss;
      ++batches;
    }
    const double train_loss = loss_sum / static_cast<double>(batches);
    result.log.push_back({epoch, "train", train_loss, std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN()});

    const EvalOutcome ev = evaluate_split(model, val, cfg, rng);
    result.log.push_back({epoch, "val", ev.loss, ev.ccc_valence, ev.ccc_arousal});

    double score;
    if (cfg.loss == LossKind::Mse) {
      score = (std::isfinite(ev.ccc_valence) && std::isfinite(ev.ccc_arousal))
                  ? 0.5 * (ev.ccc_valence + ev.ccc_arousal)
                  : -std::numeric_limits<double>::infinity();
    } else {
      score = -ev.loss;
    }
    if (score > result.best_score || result.best_epoch == 0) {
      result.best_score = score;
      result.best_epoch = epoch;
      result.best_weights = model.weights;
    }
  }

  model.weights = result.best_weights;
  if (cfg.loss == LossKind::Mse) {
    const Predictions train_preds = predict(model, train, cfg);
    std::vector<double> lv, la;
    for (const Sample& s : train) {
      lv.push_back(s.valence);
      la.push_back(s.arousal);
    }
    try {
      result.valence_stats = fit_train_stats(lv, train_preds.valence);
      result.arousal_stats = fit_train_stats(la, train_preds.arousal);
      result.has_stats = true;
    } catch (const DegenerateStatsError&) {
      result.has_stats = false;
    }
  }
  return result;
}

Predictions predict(ModelSpec& model, const std::vector<Sample>& samples, const TrainConfig& cfg) {
  if (samples.empty()) throw DomainError("predict on empty sample list");
  Predictions preds;
  RngStream rng(cfg.seed);
  const int n = static_cast<int>(samples.size());
  for (int start = 0; start < n; start += cfg.batch_size) {
    std::vector<int> indices;
    for (int i = start; i < std::min(n, start + cfg.batch_size); ++i) indices.push_back(i);
    Tensor batch = stack_inputs(samples, indices);
    Tensor out = model_forward(model, batch, false, rng, nullptr);
    if (out.rank() != 2 || out.extent(1) != 2) {
      throw DimensionError("predict expects a 2-output regression model, got " +
                           shape_str(out.shape()));
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
      preds.valence.push_back(static_cast<double>(out[static_cast<std::int64_t>(i) * 2]) /
                              cfg.target_multiplier);
      preds.arousal.push_back(static_cast<double>(out[static_cast<std::int64_t>(i) * 2 + 1]) /
                              cfg.target_multiplier);
    }
  }
  return preds;
}

std::string log_csv(const std::vector<LogRow>& log) {
  std::ostringstream out;
  out << "epoch,split,loss,ccc_valence,ccc_arousal\n";
  char buf[160];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f\n", row.epoch, row.split.c_str(),
                  row.loss, row.ccc_valence, row.ccc_arousal);
    out << buf;
  }
  return out.str();
}

template LossGradT<float> mse_loss<float>(const Tensor&, const Tensor&);
template LossGradT<double> mse_loss<double>(const DTensor&, const DTensor&);
template LossGradT<float> weighted_ce_loss<float>(const Tensor&, std::span<const int>,
                                                  std::span<const double>);
template LossGradT<double> weighted_ce_loss<double>(const DTensor&, std::span<const int>,
                                                    std::span<const double>);

}  // namespace inflatenn
