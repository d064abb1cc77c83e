#include "inflatenn/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "inflatenn/inflate.hpp"
#include "inflatenn/parallel.hpp"

namespace inflatenn {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Fan-in-scaled uniform init, keyed by parameter name so results do not
// depend on creation order.
Tensor init_uniform(RngStream& rng, const std::string& name, std::vector<int> shape, int fan_in) {
  RngStream sub = rng.split(fnv1a(name));
  const float limit = std::sqrt(3.0f / static_cast<float>(fan_in));
  return seeded_uniform<float>(sub, std::move(shape), -limit, limit);
}

const Tensor& require_weight(const ModelSpec& model, const std::string& key) {
  auto it = model.weights.find(key);
  if (it == model.weights.end()) {
    throw StateError("model '" + model.name + "' is missing weight entry '" + key + "'");
  }
  return it->second;
}

void add_conv2d(ModelSpec& model, const std::string& name, int in_ch, int out_ch, RngStream& rng) {
  LayerSpec spec;
  spec.kind = LayerKind::Conv2D;
  spec.name = name;
  spec.in_channels = in_ch;
  spec.out_channels = out_ch;
  spec.kh = spec.kw = 3;
  spec.pad = 1;  // preserves spatial extent at stride 1
  model.layers.push_back(spec);
  model.weights[name + ".weight"] = init_uniform(rng, name + ".weight", {out_ch, in_ch, 3, 3}, in_ch * 9);
  model.weights[name + ".bias"] = Tensor({out_ch});
}

void add_batchnorm(ModelSpec& model, const std::string& name, int channels) {
  LayerSpec spec;
  spec.kind = LayerKind::BatchNorm;
  spec.name = name;
  spec.channels = channels;
  model.layers.push_back(spec);
  model.weights[name + ".scale"] = Tensor::full({channels}, 1.0f);
  model.weights[name + ".offset"] = Tensor({channels});
  model.weights[name + ".running_mean"] = Tensor({channels});
  model.weights[name + ".running_var"] = Tensor::full({channels}, 1.0f);
}

void add_relu(ModelSpec& model, const std::string& name) {
  LayerSpec spec;
  spec.kind = LayerKind::ReLU;
  spec.name = name;
  model.layers.push_back(spec);
}

void add_maxpool(ModelSpec& model, const std::string& name) {
  LayerSpec spec;
  spec.kind = LayerKind::MaxPool;
  spec.name = name;
  model.layers.push_back(spec);
}

void add_dense(ModelSpec& model, const std::string& name, int in_f, int out_f, RngStream& rng) {
  LayerSpec spec;
  spec.kind = LayerKind::Dense;
  spec.name = name;
  spec.in_features = in_f;
  spec.out_features = out_f;
  model.layers.push_back(spec);
  model.weights[name + ".weight"] = init_uniform(rng, name + ".weight", {out_f, in_f}, in_f);
  model.weights[name + ".bias"] = Tensor({out_f});
}

bool is_head_kind(LayerKind kind) {
  return kind == LayerKind::Flatten || kind == LayerKind::GlobalAvgPool ||
         kind == LayerKind::Dense || kind == LayerKind::LSTM || kind == LayerKind::Softmax;
}

struct ScaleProfile {
  std::vector<int> input_shape;
  std::vector<int> widths;
  int convs_per_block;
  bool pool_after_last_block;
  std::vector<int> reg_fc;    // regression head hidden sizes + output
  std::vector<int> cls_fc;    // classification head hidden sizes + output
};

// Desk keeps the last block unpooled so per-frame features retain a coarse
// spatial grid; paper follows the VGG layout with a pool after every block.
ScaleProfile profile_for(Scale scale) {
  if (scale == Scale::Paper) {
    return {{3, 100, 80}, {64, 128, 256, 512}, 2, true, {512, 256, 2}, {512, 128, 7}};
  }
  return {{3, 32, 24}, {8, 16, 32, 64}, 1, false, {32, 16, 2}, {32, 16, 7}};
}

void append_fc_head(ModelSpec& model, int in_features, const std::vector<int>& sizes,
                    RngStream& rng) {
  int cur = in_features;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const std::string name = "fc" + std::to_string(i + 1);
    add_dense(model, name, cur, sizes[i], rng);
    cur = sizes[i];
    if (i + 1 < sizes.size()) add_relu(model, "fc" + std::to_string(i + 1) + "_relu");
  }
}

void validate_model(const ModelSpec& model) {
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    if (layer.name.empty()) throw ConfigError("layer " + std::to_string(i) + " has no name");
    if (seen.count(layer.name)) {
      throw ConfigError("duplicate layer name '" + layer.name + "'");
    }
    seen[layer.name] = static_cast<int>(i);
    if (layer.kind == LayerKind::SkipAdd) {
      auto it = seen.find(layer.skip_target);
      if (it == seen.end() || it->second >= static_cast<int>(i)) {
        throw ConfigError("skip_add '" + layer.name + "' must target a strictly earlier layer");
      }
    }
  }
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Conv3D: return "conv3d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "globalavgpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::LSTM: return "lstm";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::SkipAdd: return "skip_add";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

const LayerSpec* ModelSpec::find_layer(const std::string& layer_name) const {
  for (const auto& layer : layers) {
    if (layer.name == layer_name) return &layer;
  }
  return nullptr;
}

bool ModelSpec::has_kind(LayerKind kind) const {
  for (const auto& layer : layers) {
    if (layer.kind == kind) return true;
  }
  return false;
}

ModelSpec build_vgg_trunk(Scale scale, bool batchnorm, RngStream& rng) {
  const ScaleProfile profile = profile_for(scale);
  ModelSpec model;
  model.name = scale == Scale::Paper ? "vgg_trunk-paper" : "vgg_trunk-desk";
  if (batchnorm) model.name += "-bn";
  model.input_shape = profile.input_shape;

  int in_ch = profile.input_shape[0];
  for (int block = 0; block < 4; ++block) {
    const int width = profile.widths[static_cast<std::size_t>(block)];
    for (int conv = 0; conv < profile.convs_per_block; ++conv) {
      const std::string tag = std::to_string(block + 1) + "_" + std::to_string(conv + 1);
      add_conv2d(model, "conv" + tag, in_ch, width, rng);
      if (batchnorm) add_batchnorm(model, "bn" + tag, width);
      add_relu(model, "relu" + tag);
      in_ch = width;
    }
    // boundary = index of the block's last conv layer
    int last_conv = -1;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      if (model.layers[i].kind == LayerKind::Conv2D) last_conv = static_cast<int>(i);
    }
    model.block_boundaries.push_back(last_conv);
    if (block < 3 || profile.pool_after_last_block) {
      add_maxpool(model, "pool" + std::to_string(block + 1));
    }
  }
  validate_model(model);
  return model;
}

ModelSpec build_vgg_mini(Scale scale, Head head, bool batchnorm, RngStream& rng) {
  const ScaleProfile profile = profile_for(scale);
  ModelSpec model = build_vgg_trunk(scale, batchnorm, rng);
  model.name = scale == Scale::Paper ? "vgg_mini-paper" : "vgg_mini-desk";
  if (batchnorm) model.name += "-bn";

  const auto shapes = infer_shapes(model, {1, profile.input_shape[0], profile.input_shape[1],
                                           profile.input_shape[2]});
  const auto& last = shapes.back();
  std::int64_t flat = 1;
  for (std::size_t i = 1; i < last.size(); ++i) flat *= last[i];

  LayerSpec flatten;
  flatten.kind = LayerKind::Flatten;
  flatten.name = "flatten";
  model.layers.push_back(flatten);

  if (head == Head::Regression) {
    append_fc_head(model, static_cast<int>(flat), profile.reg_fc, rng);
  } else {
    append_fc_head(model, static_cast<int>(flat), profile.cls_fc, rng);
    LayerSpec softmax;
    softmax.kind = LayerKind::Softmax;
    softmax.name = "softmax";
    model.layers.push_back(softmax);
  }
  validate_model(model);
  return model;
}

ModelSpec build_cnn_lstm(const ModelSpec& base2d, int lstm_units, std::vector<int> fc_sizes,
                         RngStream& rng) {
  for (const auto& layer : base2d.layers) {
    if (is_head_kind(layer.kind)) {
      throw CompositionError("build_cnn_lstm needs a convolutional trunk, but base '" +
                             base2d.name + "' contains head layer '" + layer.name + "'");
    }
  }
  if (fc_sizes.empty() || fc_sizes.back() != 2) {
    throw ConfigError("cascade fc_sizes must end in 2 outputs (valence, arousal)");
  }

  ModelSpec model = base2d;
  model.name = "cnn_lstm(" + base2d.name + ")";
  model.temporal_input = true;

  const auto shapes = infer_shapes(base2d, {1, base2d.input_shape[0], base2d.input_shape[1],
                                            base2d.input_shape[2]});
  std::int64_t flat = 1;
  for (std::size_t i = 1; i < shapes.back().size(); ++i) flat *= shapes.back()[i];

  LayerSpec flatten;
  flatten.kind = LayerKind::Flatten;
  flatten.name = "flatten";
  model.layers.push_back(flatten);

  LayerSpec lstm;
  lstm.kind = LayerKind::LSTM;
  lstm.name = "lstm";
  lstm.in_features = static_cast<int>(flat);
  lstm.hidden_size = lstm_units;
  lstm.dropout_rate = 0.2f;
  lstm.recurrent_dropout_rate = 0.2f;
  model.layers.push_back(lstm);
  model.weights["lstm.w_input"] =
      init_uniform(rng, "lstm.w_input", {4 * lstm_units, static_cast<int>(flat)},
                   static_cast<int>(flat));
  model.weights["lstm.w_recurrent"] =
      init_uniform(rng, "lstm.w_recurrent", {4 * lstm_units, lstm_units}, lstm_units);
  Tensor lstm_bias({4 * lstm_units});
  for (int i = lstm_units; i < 2 * lstm_units; ++i) lstm_bias[i] = 1.0f;  // forget gate
  model.weights["lstm.bias"] = std::move(lstm_bias);

  append_fc_head(model, lstm_units, fc_sizes, rng);
  validate_model(model);
  return model;
}

ModelSpec build_i3d(const ModelSpec& base2d, const InflationConfig& cfg, RngStream& rng) {
  ModelSpec model = inflate_model(base2d, cfg, rng);
  model.name = "i3d(" + base2d.name + ")";

  int channels = 0;
  for (const auto& layer : model.layers) {
    if (layer.kind == LayerKind::Conv3D) channels = layer.out_channels;
  }
  if (channels == 0) throw CompositionError("build_i3d: base '" + base2d.name + "' has no conv layers");

  LayerSpec gap;
  gap.kind = LayerKind::GlobalAvgPool;
  gap.name = "gap";
  model.layers.push_back(gap);

  const int hidden = channels >= 256 ? 512 : 16;
  append_fc_head(model, channels, {hidden, 2}, rng);
  validate_model(model);
  return model;
}

ModelSpec trunk_of(const ModelSpec& model) {
  ModelSpec trunk;
  trunk.name = model.name + "-trunk";
  trunk.input_shape = model.input_shape;
  trunk.temporal_input = false;
  for (const auto& layer : model.layers) {
    if (is_head_kind(layer.kind)) break;
    trunk.layers.push_back(layer);
    for (const auto& [key, tensor] : model.weights) {
      if (key.rfind(layer.name + ".", 0) == 0) trunk.weights[key] = tensor;
    }
  }
  for (int b : model.block_boundaries) {
    if (b < static_cast<int>(trunk.layers.size())) trunk.block_boundaries.push_back(b);
  }
  return trunk;
}

void append_residual_block(ModelSpec& model, int channels, const std::string& prefix,
                           RngStream& rng) {
  if (model.layers.empty()) throw CompositionError("residual block needs a non-empty model");
  const std::string entry = model.layers.back().name;
  add_conv2d(model, prefix + "_a", channels, channels, rng);
  add_relu(model, prefix + "_a_relu");
  add_conv2d(model, prefix + "_b", channels, channels, rng);
  LayerSpec skip;
  skip.kind = LayerKind::SkipAdd;
  skip.name = prefix + "_skip";
  skip.skip_target = entry;
  model.layers.push_back(skip);
  add_relu(model, prefix + "_relu");
  validate_model(model);
}

std::int64_t parameter_count(const ModelSpec& model) {
  std::int64_t n = 0;
  for (const auto& [key, tensor] : model.weights) n += tensor.size();
  return n;
}

std::vector<std::vector<int>> infer_shapes(const ModelSpec& model,
                                           const std::vector<int>& batched_input) {
  const bool cascade = model.temporal_input && model.has_kind(LayerKind::LSTM);
  std::vector<int> cur = batched_input;
  int batch = batched_input[0];
  int fold = 1;
  if (cascade) {
    if (cur.size() != 5) {
      throw DimensionError("cascade model expects [batch,steps,C,H,W], got " + shape_str(cur));
    }
    fold = cur[1];
    cur = {batch * fold, cur[2], cur[3], cur[4]};
  }

  std::vector<std::vector<int>> shapes;
  std::map<std::string, std::vector<int>> by_name;
  for (const auto& layer : model.layers) {
    switch (layer.kind) {
      case LayerKind::Conv2D: {
        if (cur.size() != 4 || cur[1] != layer.in_channels) {
          throw DimensionError("layer '" + layer.name + "': expects [*," +
                               std::to_string(layer.in_channels) + ",h,w], got " + shape_str(cur));
        }
        cur = {cur[0], layer.out_channels, (cur[2] + 2 * layer.pad - layer.kh) / layer.stride + 1,
               (cur[3] + 2 * layer.pad - layer.kw) / layer.stride + 1};
        break;
      }
      case LayerKind::Conv3D: {
        if (cur.size() != 5 || cur[1] != layer.in_channels) {
          throw DimensionError("layer '" + layer.name + "': expects [*," +
                               std::to_string(layer.in_channels) + ",t,h,w], got " + shape_str(cur));
        }
        const int span = (layer.kt - 1) * layer.temporal_dilation + 1;
        cur = {cur[0], layer.out_channels, cur[2] + 2 * layer.temporal_pad - span + 1,
               (cur[3] + 2 * layer.pad - layer.kh) / layer.stride + 1,
               (cur[4] + 2 * layer.pad - layer.kw) / layer.stride + 1};
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::ReLU:
      case LayerKind::Dropout:
      case LayerKind::Softmax:
        break;
      case LayerKind::MaxPool: {
        if (cur.size() == 4) {
          cur = {cur[0], cur[1], cur[2] / layer.pool_h, cur[3] / layer.pool_w};
        } else if (cur.size() == 5) {
          cur = {cur[0], cur[1], cur[2] / layer.pool_t, cur[3] / layer.pool_h,
                 cur[4] / layer.pool_w};
        } else {
          throw DimensionError("layer '" + layer.name + "': maxpool on " + shape_str(cur));
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (cur.size() < 3) {
          throw DimensionError("layer '" + layer.name + "': global pool on " + shape_str(cur));
        }
        cur = {cur[0], cur[1]};
        break;
      }
      case LayerKind::Flatten: {
        std::int64_t flat = 1;
        for (std::size_t i = 1; i < cur.size(); ++i) flat *= cur[i];
        cur = {cur[0], static_cast<int>(flat)};
        break;
      }
      case LayerKind::Dense: {
        if (cur.size() != 2 || cur[1] != layer.in_features) {
          throw DimensionError("layer '" + layer.name + "': expects [*," +
                               std::to_string(layer.in_features) + "], got " + shape_str(cur));
        }
        cur = {cur[0], layer.out_features};
        break;
      }
      case LayerKind::LSTM: {
        if (cur.size() != 2 || cur[1] != layer.in_features) {
          throw DimensionError("layer '" + layer.name + "': expects [*," +
                               std::to_string(layer.in_features) + "], got " + shape_str(cur));
        }
        cur = {batch, layer.hidden_size};
        fold = 1;
        break;
      }
      case LayerKind::SkipAdd: {
        auto it = by_name.find(layer.skip_target);
        if (it == by_name.end() || it->second != cur) {
          throw DimensionError("layer '" + layer.name + "': skip target shape mismatch");
        }
        break;
      }
    }
    by_name[layer.name] = cur;
    shapes.push_back(cur);
  }
  return shapes;
}

namespace {

Conv2DLayer conv2d_from(const ModelSpec& model, const LayerSpec& spec) {
  Conv2DLayer layer;
  layer.weights = require_weight(model, spec.name + ".weight");
  layer.bias = require_weight(model, spec.name + ".bias");
  layer.stride = spec.stride;
  layer.pad = spec.pad;
  return layer;
}

Conv3DLayer conv3d_from(const ModelSpec& model, const LayerSpec& spec) {
  Conv3DLayer layer;
  layer.weights = require_weight(model, spec.name + ".weight");
  layer.bias = require_weight(model, spec.name + ".bias");
  layer.stride = spec.stride;
  layer.pad = spec.pad;
  layer.temporal_pad = spec.temporal_pad;
  layer.temporal_dilation = spec.temporal_dilation;
  return layer;
}

DenseLayer dense_from(const ModelSpec& model, const LayerSpec& spec) {
  DenseLayer layer;
  layer.weights = require_weight(model, spec.name + ".weight");
  layer.bias = require_weight(model, spec.name + ".bias");
  return layer;
}

LSTMLayer lstm_from(const ModelSpec& model, const LayerSpec& spec) {
  LSTMLayer layer;
  layer.w_input = require_weight(model, spec.name + ".w_input");
  layer.w_recurrent = require_weight(model, spec.name + ".w_recurrent");
  layer.bias = require_weight(model, spec.name + ".bias");
  layer.hidden_size = spec.hidden_size;
  layer.dropout_rate = spec.dropout_rate;
  layer.recurrent_dropout_rate = spec.recurrent_dropout_rate;
  return layer;
}

BatchNormLayer batchnorm_from(const ModelSpec& model, const LayerSpec& spec) {
  BatchNormLayer layer;
  layer.scale = require_weight(model, spec.name + ".scale");
  layer.offset = require_weight(model, spec.name + ".offset");
  layer.running_mean = require_weight(model, spec.name + ".running_mean");
  layer.running_var = require_weight(model, spec.name + ".running_var");
  layer.epsilon = spec.epsilon;
  layer.momentum = spec.momentum;
  return layer;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  if (!dst.same_shape(src)) {
    throw DimensionError("gradient shape mismatch: " + shape_str(dst.shape()) + " vs " +
                         shape_str(src.shape()));
  }
  for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor model_forward(ModelSpec& model, const Tensor& batch, bool train_mode, RngStream& rng,
                     ForwardTrace* trace) {
  const bool cascade = model.temporal_input && model.has_kind(LayerKind::LSTM);
  Tensor cur = batch;
  int real_batch = batch.extent(0);
  int fold = 1;
  if (cascade) {
    if (batch.rank() != 5) {
      throw DimensionError("cascade model '" + model.name + "' expects [batch,steps,C,H,W], got " +
                           shape_str(batch.shape()));
    }
    fold = batch.extent(1);
    cur = batch.reshaped({real_batch * fold, batch.extent(2), batch.extent(3), batch.extent(4)});
  }
  if (trace) {
    trace->layers.assign(model.layers.size(), {});
    trace->fold_steps = fold;
  }

  std::map<std::string, Tensor> outputs_by_name;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& spec = model.layers[li];
    LayerTrace* lt = trace ? &trace->layers[li] : nullptr;
    Tensor next;
    try {
      switch (spec.kind) {
        case LayerKind::Conv2D: {
          Conv2DLayer layer = conv2d_from(model, spec);
          if (lt) lt->input = cur;
          next = conv2d_forward(layer, cur);
          break;
        }
        case LayerKind::Conv3D: {
          Conv3DLayer layer = conv3d_from(model, spec);
          if (lt) lt->input = cur;
          next = conv3d_forward(layer, cur);
          break;
        }
        case LayerKind::BatchNorm: {
          BatchNormLayer layer = batchnorm_from(model, spec);
          next = batchnorm_forward(layer, cur, train_mode, lt ? &lt->bn : nullptr);
          if (train_mode) {
            model.weights[spec.name + ".running_mean"] = layer.running_mean;
            model.weights[spec.name + ".running_var"] = layer.running_var;
          }
          break;
        }
        case LayerKind::ReLU: {
          if (lt) lt->input = cur;
          next = relu_forward(cur);
          break;
        }
        case LayerKind::MaxPool: {
          next = maxpool_forward(spec.pool_t, spec.pool_h, spec.pool_w, cur,
                                 lt ? &lt->pool : nullptr);
          break;
        }
        case LayerKind::GlobalAvgPool: {
          if (lt) lt->input = cur;
          next = global_avg_pool_forward(cur);
          break;
        }
        case LayerKind::Flatten: {
          std::int64_t flat = cur.size() / cur.extent(0);
          if (lt) lt->input = cur;
          next = cur.reshaped({cur.extent(0), static_cast<int>(flat)});
          break;
        }
        case LayerKind::Dense: {
          DenseLayer layer = dense_from(model, spec);
          if (lt) lt->input = cur;
          next = dense_forward(layer, cur);
          break;
        }
        case LayerKind::LSTM: {
          LSTMLayer layer = lstm_from(model, spec);
          if (cur.rank() != 2 || cur.extent(0) % fold != 0) {
            throw DimensionError("lstm input must be foldable frame features, got " +
                                 shape_str(cur.shape()));
          }
          const int items = cur.extent(0) / fold;
          const int feat = cur.extent(1);
          next = Tensor({items, layer.hidden_size});
          if (lt) lt->lstm.resize(static_cast<std::size_t>(items));
          const std::uint64_t mask_seed = rng.next_u64();
          RngStream mask_base(mask_seed);
          std::vector<RngStream> item_rngs;
          item_rngs.reserve(static_cast<std::size_t>(items));
          for (int n = 0; n < items; ++n) item_rngs.push_back(mask_base.split(static_cast<std::uint64_t>(n)));
          parallel_for(items, [&](std::int64_t n) {
            Tensor seq({fold, feat});
            std::copy_n(cur.data() + n * fold * feat, static_cast<std::size_t>(fold) * feat,
                        seq.data());
            LSTMCacheT<float>* cache = lt ? &lt->lstm[static_cast<std::size_t>(n)] : nullptr;
            Tensor hseq = lstm_forward(layer, seq, train_mode, item_rngs[static_cast<std::size_t>(n)],
                                       cache);
            std::copy_n(hseq.data() + static_cast<std::int64_t>(fold - 1) * layer.hidden_size,
                        layer.hidden_size, next.data() + n * layer.hidden_size);
          });
          break;
        }
        case LayerKind::Dropout: {
          Tensor mask = dropout_mask<float>(spec.rate, cur.shape(), train_mode, rng);
          next = apply_mask(cur, mask);
          if (lt) lt->mask = std::move(mask);
          break;
        }
        case LayerKind::SkipAdd: {
          auto it = outputs_by_name.find(spec.skip_target);
          if (it == outputs_by_name.end()) {
            throw StateError("skip target '" + spec.skip_target + "' not yet computed");
          }
          if (!it->second.same_shape(cur)) {
            throw DimensionError("skip target shape " + shape_str(it->second.shape()) +
                                 " does not match input " + shape_str(cur.shape()));
          }
          next = cur;
          for (std::int64_t i = 0; i < next.size(); ++i) next[i] += it->second[i];
          break;
        }
        case LayerKind::Softmax: {
          next = softmax_forward(cur);
          if (lt) lt->output = next;
          break;
        }
      }
    } catch (const DimensionError& e) {
      throw DimensionError("layer '" + spec.name + "': " + e.what());
    }
    cur = std::move(next);
    // retain outputs only where a later skip_add reads them
    for (std::size_t lj = li + 1; lj < model.layers.size(); ++lj) {
      if (model.layers[lj].kind == LayerKind::SkipAdd && model.layers[lj].skip_target == spec.name) {
        outputs_by_name[spec.name] = cur;
        break;
      }
    }
  }
  return cur;
}

GradMap model_backward(const ModelSpec& model, const ForwardTrace& trace, const Tensor& grad_out) {
  if (trace.layers.size() != model.layers.size()) {
    throw StateError("forward trace does not match model '" + model.name + "'");
  }
  GradMap grads;
  const int fold = trace.fold_steps;
  std::vector<Tensor> act_grad(model.layers.size() + 1);
  act_grad[model.layers.size()] = grad_out;

  for (int li = static_cast<int>(model.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& spec = model.layers[static_cast<std::size_t>(li)];
    const LayerTrace& lt = trace.layers[static_cast<std::size_t>(li)];
    Tensor g = std::move(act_grad[static_cast<std::size_t>(li) + 1]);
    if (g.empty()) {
      throw StateError("no gradient reached layer '" + spec.name + "'");
    }
    Tensor gin;
    switch (spec.kind) {
      case LayerKind::Conv2D: {
        Conv2DLayer layer = conv2d_from(model, spec);
        auto cg = conv2d_backward(layer, lt.input, g);
        grads[spec.name + ".weight"] = std::move(cg.weights);
        grads[spec.name + ".bias"] = std::move(cg.bias);
        gin = std::move(cg.input);
        break;
      }
      case LayerKind::Conv3D: {
        Conv3DLayer layer = conv3d_from(model, spec);
        auto cg = conv3d_backward(layer, lt.input, g);
        grads[spec.name + ".weight"] = std::move(cg.weights);
        grads[spec.name + ".bias"] = std::move(cg.bias);
        gin = std::move(cg.input);
        break;
      }
      case LayerKind::BatchNorm: {
        BatchNormLayer layer = batchnorm_from(model, spec);
        auto bg = batchnorm_backward(layer, lt.bn, g);
        grads[spec.name + ".scale"] = std::move(bg.scale);
        grads[spec.name + ".offset"] = std::move(bg.offset);
        gin = std::move(bg.input);
        break;
      }
      case LayerKind::ReLU: {
        gin = relu_backward(lt.input, g);
        break;
      }
      case LayerKind::MaxPool: {
        gin = maxpool_backward(lt.pool, g);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        gin = global_avg_pool_backward(lt.input.shape(), g);
        break;
      }
      case LayerKind::Flatten: {
        gin = g.reshaped(lt.input.shape());
        break;
      }
      case LayerKind::Dense: {
        DenseLayer layer = dense_from(model, spec);
        auto dg = dense_backward(layer, lt.input, g);
        grads[spec.name + ".weight"] = std::move(dg.weights);
        grads[spec.name + ".bias"] = std::move(dg.bias);
        gin = std::move(dg.input);
        break;
      }
      case LayerKind::LSTM: {
        LSTMLayer layer = lstm_from(model, spec);
        const int items = g.extent(0);
        const int hidden = layer.hidden_size;
        if (lt.lstm.size() != static_cast<std::size_t>(items)) {
          throw StateError("lstm '" + spec.name + "' cache does not match gradient batch");
        }
        const int feat = lt.lstm[0].inputs.extent(1);
        gin = Tensor({items * fold, feat});
        std::vector<LSTMGradsT<float>> item_grads(static_cast<std::size_t>(items));
        parallel_for(items, [&](std::int64_t n) {
          Tensor ghseq({fold, hidden});
          std::copy_n(g.data() + n * hidden, hidden,
                      ghseq.data() + static_cast<std::int64_t>(fold - 1) * hidden);
          item_grads[static_cast<std::size_t>(n)] =
              lstm_backward(layer, lt.lstm[static_cast<std::size_t>(n)], ghseq);
          std::copy_n(item_grads[static_cast<std::size_t>(n)].input.data(),
                      static_cast<std::size_t>(fold) * feat, gin.data() + n * fold * feat);
        });
        Tensor gwx(layer.w_input.shape()), gwh(layer.w_recurrent.shape()), gb(layer.bias.shape());
        for (const auto& ig : item_grads) {
          for (std::int64_t i = 0; i < gwx.size(); ++i) gwx[i] += ig.w_input[i];
          for (std::int64_t i = 0; i < gwh.size(); ++i) gwh[i] += ig.w_recurrent[i];
          for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += ig.bias[i];
        }
        grads[spec.name + ".w_input"] = std::move(gwx);
        grads[spec.name + ".w_recurrent"] = std::move(gwh);
        grads[spec.name + ".bias"] = std::move(gb);
        break;
      }
      case LayerKind::Dropout: {
        gin = apply_mask(g, lt.mask);
        break;
      }
      case LayerKind::SkipAdd: {
        // forward added the target's output; gradient flows to both paths
        int target_index = -1;
        for (int lj = 0; lj < li; ++lj) {
          if (model.layers[static_cast<std::size_t>(lj)].name == spec.skip_target) target_index = lj;
        }
        if (target_index < 0) throw StateError("skip target '" + spec.skip_target + "' not found");
        add_inplace(act_grad[static_cast<std::size_t>(target_index) + 1], g);
        gin = std::move(g);
        break;
      }
      case LayerKind::Softmax: {
        gin = softmax_backward(lt.output, g);
        break;
      }
    }
    add_inplace(act_grad[static_cast<std::size_t>(li)], gin);
  }
  return grads;
}

std::string describe_model(const ModelSpec& model) {
  std::ostringstream out;
  out << "model: " << model.name << "\n";
  out << "input: " << shape_str(model.input_shape);
  if (model.temporal_input) out << " (+ temporal axis)";
  out << "\n";
  out << "layers: " << model.layers.size() << "\n";
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    out << "  " << i << "\t" << layer.name << "\t" << layer_kind_name(layer.kind);
    switch (layer.kind) {
      case LayerKind::Conv2D:
        out << "\t" << layer.in_channels << "->" << layer.out_channels << " k=" << layer.kh << "x"
            << layer.kw << " pad=" << layer.pad;
        break;
      case LayerKind::Conv3D:
        out << "\t" << layer.in_channels << "->" << layer.out_channels << " k=" << layer.kt << "x"
            << layer.kh << "x" << layer.kw << " dilation=" << layer.temporal_dilation;
        break;
      case LayerKind::Dense:
        out << "\t" << layer.in_features << "->" << layer.out_features;
        break;
      case LayerKind::LSTM:
        out << "\t" << layer.in_features << "->" << layer.hidden_size << " dropout="
            << layer.dropout_rate << "/" << layer.recurrent_dropout_rate;
        break;
      case LayerKind::MaxPool:
        out << "\t" << layer.pool_t << "x" << layer.pool_h << "x" << layer.pool_w;
        break;
      case LayerKind::SkipAdd:
        out << "\t+" << layer.skip_target;
        break;
      default:
        break;
    }
    out << "\n";
    for (const auto& [key, tensor] : model.weights) {
      if (key.rfind(layer.name + ".", 0) == 0) {
        out << "      " << key << "\trank-" << tensor.rank() << " " << shape_str(tensor.shape())
            << "\n";
      }
    }
  }
  out << "blocks:";
  for (int b : model.block_boundaries) out << " " << b;
  out << "\n";
  out << "total_params: " << parameter_count(model) << "\n";
  return out.str();
}

}  // namespace inflatenn
