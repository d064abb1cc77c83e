#include "inflatenn/inflate.hpp"

#include <cmath>

namespace inflatenn {

namespace {

bool inflatable_kind(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D:
    case LayerKind::BatchNorm:
    case LayerKind::ReLU:
    case LayerKind::MaxPool:
    case LayerKind::Dropout:
    case LayerKind::SkipAdd:
      return true;
    default:
      return false;
  }
}

bool head_kind(LayerKind kind) {
  return kind == LayerKind::Flatten || kind == LayerKind::GlobalAvgPool ||
         kind == LayerKind::Dense || kind == LayerKind::Softmax;
}

void check_config(const InflationConfig& cfg) {
  if (cfg.temporal_extent <= 0 || cfg.temporal_extent % 2 == 0) {
    throw ConfigError("temporal extent must be odd and positive, got " +
                      std::to_string(cfg.temporal_extent));
  }
  if (cfg.dilation_schedule.empty()) {
    throw ConfigError("dilation schedule must have at least one entry");
  }
  for (int d : cfg.dilation_schedule) {
    if (d < 1) throw ConfigError("dilation values must be positive");
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

InflateMode parse_inflate_mode(const std::string& s) {
  if (s == "centered") return InflateMode::Centered;
  if (s == "copied") return InflateMode::Copied;
  throw ConfigError("unknown inflation mode '" + s + "' (centered|copied)");
}

OffCenterInit parse_off_center_init(const std::string& s) {
  if (s == "zero") return OffCenterInit::Zero;
  if (s == "random") return OffCenterInit::Random;
  throw ConfigError("unknown off-center init '" + s + "' (zero|random)");
}

Tensor inflate_kernel(const Tensor& w2d, const InflationConfig& cfg, RngStream& rng) {
  if (w2d.rank() != 4) {
    throw DimensionError("inflate_kernel expects [out,in,kh,kw], got " + shape_str(w2d.shape()));
  }
  check_config(cfg);
  const int n = cfg.temporal_extent;
  const int oc = w2d.extent(0), ic = w2d.extent(1), kh = w2d.extent(2), kw = w2d.extent(3);
  const int center = n / 2;
  const std::int64_t slice = static_cast<std::int64_t>(kh) * kw;

  Tensor out({oc, ic, n, kh, kw});
  if (cfg.mode == InflateMode::Copied) {
    const float scale = cfg.copied_rescale ? 1.0f / static_cast<float>(n) : 1.0f;
    for (std::int64_t f = 0; f < static_cast<std::int64_t>(oc) * ic; ++f) {
      const float* src = w2d.data() + f * slice;
      float* dst = out.data() + f * n * slice;
      for (int t = 0; t < n; ++t) {
        for (std::int64_t i = 0; i < slice; ++i) dst[t * slice + i] = src[i] * scale;
      }
    }
    return out;
  }

  // Centered: off-center slices zero, or zero-mean uniform matched to the 2D
  // kernel's empirical std (uniform on [-a,a] has std a/sqrt(3)).
  float limit = 0.0f;
  if (cfg.off_center_init == OffCenterInit::Random) {
    limit = static_cast<float>(std::sqrt(3.0 * reduce_moments(w2d).var));
  }
  for (std::int64_t f = 0; f < static_cast<std::int64_t>(oc) * ic; ++f) {
    const float* src = w2d.data() + f * slice;
    float* dst = out.data() + f * n * slice;
    for (int t = 0; t < n; ++t) {
      for (std::int64_t i = 0; i < slice; ++i) {
        if (t == center) {
          dst[t * slice + i] = src[i];
        } else if (limit > 0.0f) {
          dst[t * slice + i] = rng.uniform(-limit, limit);
        }
      }
    }
  }
  return out;
}

ModelSpec inflate_model(const ModelSpec& model2d, const InflationConfig& cfg, RngStream& rng) {
  check_config(cfg);
  // trunk/head split: head starts at the first flatten/gap/dense/softmax
  std::size_t trunk_end = model2d.layers.size();
  for (std::size_t i = 0; i < model2d.layers.size(); ++i) {
    if (head_kind(model2d.layers[i].kind)) {
      trunk_end = i;
      break;
    }
  }
  for (std::size_t i = 0; i < model2d.layers.size(); ++i) {
    const auto& layer = model2d.layers[i];
    const bool head_ok = head_kind(layer.kind) || layer.kind == LayerKind::ReLU ||
                         layer.kind == LayerKind::Dropout;
    if (i < trunk_end ? !inflatable_kind(layer.kind) : !head_ok) {
      throw UnsupportedLayerError("cannot inflate layer '" + layer.name + "' of kind " +
                                  layer_kind_name(layer.kind));
    }
  }

  // conv layer index -> block index via block_boundaries (empty = one block)
  const int n = cfg.temporal_extent;
  ModelSpec out;
  out.name = model2d.name + "-i3d";
  out.input_shape = model2d.input_shape;
  out.temporal_input = true;
  out.block_boundaries = model2d.block_boundaries;

  for (std::size_t i = 0; i < trunk_end; ++i) {
    LayerSpec spec = model2d.layers[i];
    if (spec.kind == LayerKind::Conv2D) {
      int block = 0;
      for (std::size_t b = 0; b < model2d.block_boundaries.size(); ++b) {
        if (static_cast<int>(i) > model2d.block_boundaries[b]) block = static_cast<int>(b) + 1;
      }
      if (block >= static_cast<int>(cfg.dilation_schedule.size())) {
        throw ConfigError("dilation schedule has " + std::to_string(cfg.dilation_schedule.size()) +
                          " entries but layer '" + spec.name + "' is in block " +
                          std::to_string(block + 1));
      }
      const int dilation = cfg.dilation_schedule[static_cast<std::size_t>(block)];
      spec.kind = LayerKind::Conv3D;
      spec.kt = n;
      spec.temporal_dilation = dilation;
      spec.temporal_pad = (n - 1) * dilation / 2;  // preserves temporal extent
      out.layers.push_back(spec);
      RngStream layer_rng = rng.split(fnv1a(spec.name + ".weight"));
      out.weights[spec.name + ".weight"] =
          inflate_kernel(model2d.weights.at(spec.name + ".weight"), cfg, layer_rng);
      out.weights[spec.name + ".bias"] = model2d.weights.at(spec.name + ".bias");
    } else {
      out.layers.push_back(spec);
      for (const auto& [key, tensor] : model2d.weights) {
        if (key.rfind(spec.name + ".", 0) == 0) out.weights[key] = tensor;
      }
    }
  }
  return out;
}

GradientMask build_gradient_mask(const ModelSpec& model3d, const InflationConfig& cfg) {
  check_config(cfg);
  const int n = cfg.temporal_extent;
  for (const auto& layer : model3d.layers) {
    if (layer.kind == LayerKind::Conv3D && layer.kt != n) {
      throw ConfigError("gradient mask: layer '" + layer.name + "' has temporal extent " +
                        std::to_string(layer.kt) + ", config says " + std::to_string(n));
    }
  }
  GradientMask mask;
  for (const auto& [key, tensor] : model3d.weights) {
    mask.masks[key] = Tensor::full(tensor.shape(), 1.0f);
  }
  if (!cfg.masking) return mask;
  const int center = n / 2;
  for (const auto& layer : model3d.layers) {
    if (layer.kind != LayerKind::Conv3D) continue;
    Tensor& m = mask.masks.at(layer.name + ".weight");
    const int kh = m.extent(3), kw = m.extent(4);
    const std::int64_t slice = static_cast<std::int64_t>(kh) * kw;
    for (std::int64_t f = 0; f < static_cast<std::int64_t>(m.extent(0)) * m.extent(1); ++f) {
      float* dst = m.data() + (f * n + center) * slice;
      for (std::int64_t i = 0; i < slice; ++i) dst[i] = 0.0f;
    }
  }
  return mask;
}

GradientMask freeze_layers_mask(const ModelSpec& model, const std::vector<std::string>& layer_names) {
  GradientMask mask;
  for (const auto& [key, tensor] : model.weights) {
    bool frozen = false;
    for (const auto& name : layer_names) {
      if (key.rfind(name + ".", 0) == 0) frozen = true;
    }
    mask.masks[key] = Tensor::full(tensor.shape(), frozen ? 0.0f : 1.0f);
  }
  return mask;
}

namespace {
void check_multiplier(const InflationConfig& cfg) {
  if (!(cfg.target_multiplier > 0.0)) {
    throw ConfigError("target multiplier must be positive, got " +
                      std::to_string(cfg.target_multiplier));
  }
}
}  // namespace

std::vector<double> scale_targets(const std::vector<double>& labels, const InflationConfig& cfg) {
  check_multiplier(cfg);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] * cfg.target_multiplier;
  return out;
}

std::vector<double> unscale_predictions(const std::vector<double>& preds,
                                        const InflationConfig& cfg) {
  check_multiplier(cfg);
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out[i] = preds[i] / cfg.target_multiplier;
  return out;
}

float scale_target(float label, const InflationConfig& cfg) {
  check_multiplier(cfg);
  return static_cast<float>(label * cfg.target_multiplier);
}

float unscale_prediction(float pred, const InflationConfig& cfg) {
  check_multiplier(cfg);
  return static_cast<float>(pred / cfg.target_multiplier);
}

}  // namespace inflatenn
