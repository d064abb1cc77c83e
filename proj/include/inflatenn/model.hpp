#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inflatenn/layers.hpp"
#include "inflatenn/tensor.hpp"

namespace inflatenn {

enum class LayerKind {
  Conv2D,
  Conv3D,
  BatchNorm,
  ReLU,
  MaxPool,
  GlobalAvgPool,
  Flatten,
  Dense,
  LSTM,
  Dropout,
  SkipAdd,
  Softmax,
};

const char* layer_kind_name(LayerKind kind);

// Flat per-kind parameter record; only the fields for the layer's kind are
// meaningful. Weight tensors live in ModelSpec::weights under
// "<name>.weight", "<name>.bias", "<name>.scale", "<name>.offset",
// "<name>.running_mean", "<name>.running_var", "<name>.w_input",
// "<name>.w_recurrent".
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  // conv2d/conv3d
  int in_channels = 0;
  int out_channels = 0;
  int kt = 0, kh = 0, kw = 0;
  int stride = 1;
  int pad = 0;
  int temporal_pad = 0;
  int temporal_dilation = 1;
  // batchnorm
  int channels = 0;
  float epsilon = 1e-5f;
  float momentum = 0.1f;
  // maxpool window
  int pool_t = 1, pool_h = 2, pool_w = 2;
  // dense
  int in_features = 0;
  int out_features = 0;
  // lstm
  int hidden_size = 0;
  float dropout_rate = 0.0f;
  float recurrent_dropout_rate = 0.0f;
  // dropout
  float rate = 0.0f;
  // skip_add
  std::string skip_target;
};

// Input layouts: 2D models take [batch, C, H, W]. Cascade models (an LSTM
// layer present) take [batch, T, C, H, W]; pre-LSTM layers run per frame with
// the temporal axis folded into the batch. i3D models (conv3d layers) take
// [batch, C, T, H, W].
struct ModelSpec {
  std::string name;
  std::vector<int> input_shape;  // {C, H, W}
  bool temporal_input = false;
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> weights;
  std::vector<int> block_boundaries;  // layer index of each block's last conv

  const LayerSpec* find_layer(const std::string& layer_name) const;
  bool has_kind(LayerKind kind) const;
};

enum class Scale { Desk, Paper };
enum class Head { Regression, Classification };

// --- builders (weights initialized fan-in-scaled uniform from rng) ---
ModelSpec build_vgg_trunk(Scale scale, bool batchnorm, RngStream& rng);
ModelSpec build_vgg_mini(Scale scale, Head head, bool batchnorm, RngStream& rng);
ModelSpec build_cnn_lstm(const ModelSpec& base2d, int lstm_units, std::vector<int> fc_sizes,
                         RngStream& rng);
struct InflationConfig;  // inflate.hpp
ModelSpec build_i3d(const ModelSpec& base2d, const InflationConfig& cfg, RngStream& rng);

// Trunk copy of a full model: layers up to the first head layer
// (flatten/global-avg-pool/dense/softmax), with the matching weights.
ModelSpec trunk_of(const ModelSpec& model);

// Appends a mini residual block (two convs with a skip connection) to a
// trunk; used to exercise skip_add.
void append_residual_block(ModelSpec& model, int channels, const std::string& prefix,
                           RngStream& rng);

std::int64_t parameter_count(const ModelSpec& model);

// Predicted shape of every layer output for a given batched input shape.
std::vector<std::vector<int>> infer_shapes(const ModelSpec& model,
                                           const std::vector<int>& batched_input);

// Per-layer caches captured during a training-mode forward pass.
struct LayerTrace {
  Tensor input;
  Tensor output;
  Tensor mask;  // dropout
  MaxPoolCacheT<float> pool;
  BatchNormCacheT<float> bn;
  std::vector<LSTMCacheT<float>> lstm;  // one per batch item
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  int fold_steps = 1;  // temporal fold factor for cascade models
};

// Applies layers in order; BN running statistics update in train mode.
Tensor model_forward(ModelSpec& model, const Tensor& batch, bool train_mode, RngStream& rng,
                     ForwardTrace* trace = nullptr);

using GradMap = std::map<std::string, Tensor>;

// Gradients of every weight given d(loss)/d(output); requires the trace of a
// train-mode forward.
GradMap model_backward(const ModelSpec& model, const ForwardTrace& trace, const Tensor& grad_out);

// Human-readable architecture manifest (key/value header + layer table).
std::string describe_model(const ModelSpec& model);

}  // namespace inflatenn
