#pragma once

#include <map>
#include <string>
#include <vector>

#include "inflatenn/model.hpp"
#include "inflatenn/tensor.hpp"

namespace inflatenn {

enum class InflateMode { Centered, Copied };
enum class OffCenterInit { Zero, Random };

// The 2D->3D weight-inflation design space: how the temporal axis of each
// kernel is filled (mode + off-center init), whether center slices are frozen
// during training (masking), the per-block temporal dilation schedule, and
// the regression-target multiplier.
struct InflationConfig {
  InflateMode mode = InflateMode::Centered;
  OffCenterInit off_center_init = OffCenterInit::Zero;  // recorded but inert for Copied
  bool masking = false;
  std::vector<int> dilation_schedule = {1, 1, 1, 1};  // one entry per conv block
  double target_multiplier = 1.0;
  int temporal_extent = 3;  // odd, so a center slice exists
  bool copied_rescale = false;  // divide copied slices by temporal_extent
};

InflateMode parse_inflate_mode(const std::string& s);
OffCenterInit parse_off_center_init(const std::string& s);

// name -> binary tensor, 1 = trainable, 0 = frozen.
struct GradientMask {
  std::map<std::string, Tensor> masks;
};

// [out,in,kh,kw] -> [out,in,n,kh,kw]. Copied mode replicates the 2D kernel
// into every slice (each divided by n iff copied_rescale); centered mode puts
// it in slice n/2 and fills the rest with zeros or zero-mean uniform noise
// whose std matches the 2D kernel's.
Tensor inflate_kernel(const Tensor& w2d, const InflationConfig& cfg, RngStream& rng);

// Trunk-wide inflation: conv2d -> conv3d (block b gets
// dilation_schedule[b]), batchnorm parameters copied unchanged, maxpool ->
// 1x2x2, relu/dropout/skip_add unchanged. Any head layers present are
// dropped; model-graph owns head construction.
ModelSpec inflate_model(const ModelSpec& model2d, const InflationConfig& cfg, RngStream& rng);

GradientMask build_gradient_mask(const ModelSpec& model3d, const InflationConfig& cfg);

// All-zero masks for the named layers' parameters, ones elsewhere; the
// fine-tuning "freeze early blocks" control.
GradientMask freeze_layers_mask(const ModelSpec& model, const std::vector<std::string>& layer_names);

std::vector<double> scale_targets(const std::vector<double>& labels, const InflationConfig& cfg);
std::vector<double> unscale_predictions(const std::vector<double>& preds, const InflationConfig& cfg);
float scale_target(float label, const InflationConfig& cfg);
float unscale_prediction(float pred, const InflationConfig& cfg);

}  // namespace inflatenn
