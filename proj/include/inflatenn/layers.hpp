#pragma once

#include <vector>

#include "inflatenn/tensor.hpp"

namespace inflatenn {

// Convolution is cross-correlation (no kernel flip). All weight layouts are
// output-channel major; accumulation is in double regardless of storage type.

template <typename T>
struct Conv2DLayerT {
  TensorT<T> weights;  // [out_ch, in_ch, kh, kw]
  TensorT<T> bias;     // [out_ch]
  int stride = 1;
  int pad = 0;
};

template <typename T>
struct Conv3DLayerT {
  TensorT<T> weights;  // [out_ch, in_ch, kt, kh, kw]
  TensorT<T> bias;     // [out_ch]
  int stride = 1;            // spatial; temporal stride is always 1
  int pad = 0;               // spatial
  int temporal_pad = 0;
  int temporal_dilation = 1;  // applied to the time axis only
};

template <typename T>
struct DenseLayerT {
  TensorT<T> weights;  // [out, in]
  TensorT<T> bias;     // [out]
};

// Gate order in the stacked weight matrices is input, forget, candidate,
// output. Dropout masks are sampled once per sequence in train mode (inverted
// scaling, so eval is the identity).
template <typename T>
struct LSTMLayerT {
  TensorT<T> w_input;      // [4*hidden, features]
  TensorT<T> w_recurrent;  // [4*hidden, hidden]
  TensorT<T> bias;         // [4*hidden]
  int hidden_size = 0;
  float dropout_rate = 0.0f;
  float recurrent_dropout_rate = 0.0f;
};

template <typename T>
struct BatchNormLayerT {
  TensorT<T> scale;         // [channels]
  TensorT<T> offset;        // [channels]
  TensorT<T> running_mean;  // [channels]
  TensorT<T> running_var;   // [channels]
  double epsilon = 1e-5;
  double momentum = 0.1;  // running = (1-m)*running + m*batch
};

using Conv2DLayer = Conv2DLayerT<float>;
using Conv3DLayer = Conv3DLayerT<float>;
using DenseLayer = DenseLayerT<float>;
using LSTMLayer = LSTMLayerT<float>;
using BatchNormLayer = BatchNormLayerT<float>;

template <typename T>
struct ConvGradsT {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
struct DenseGradsT {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
struct BatchNormCacheT {
  TensorT<T> input;
  std::vector<double> mean;     // per channel, batch statistics
  std::vector<double> inv_std;  // 1/sqrt(var+eps)
  bool train_mode = false;
};

template <typename T>
struct BatchNormGradsT {
  TensorT<T> input;
  TensorT<T> scale;
  TensorT<T> offset;
};

template <typename T>
struct MaxPoolCacheT {
  std::vector<int> in_shape;
  std::vector<std::int64_t> argmax;  // flat input offset per output element
};

template <typename T>
struct LSTMCacheT {
  TensorT<T> inputs;        // [steps, features] after input dropout
  TensorT<T> gates;         // [steps, 4*hidden] post-activation (i,f,g,o)
  TensorT<T> cells;         // [steps, hidden]
  TensorT<T> hidden;        // [steps, hidden]
  TensorT<T> input_mask;    // [features] scaled dropout mask (empty if off)
  TensorT<T> recurrent_mask;  // [hidden]
};

template <typename T>
struct LSTMGradsT {
  TensorT<T> input;        // [steps, features]
  TensorT<T> w_input;
  TensorT<T> w_recurrent;
  TensorT<T> bias;
};

// ---- conv2d: x [batch, in_ch, h, w] -> [batch, out_ch, oh, ow]
template <typename T>
TensorT<T> conv2d_forward(const Conv2DLayerT<T>& layer, const TensorT<T>& x);
template <typename T>
ConvGradsT<T> conv2d_backward(const Conv2DLayerT<T>& layer, const TensorT<T>& x,
                              const TensorT<T>& grad_out);

// ---- conv3d: x [batch, in_ch, t, h, w] -> [batch, out_ch, ot, oh, ow]
template <typename T>
TensorT<T> conv3d_forward(const Conv3DLayerT<T>& layer, const TensorT<T>& x);
template <typename T>
ConvGradsT<T> conv3d_backward(const Conv3DLayerT<T>& layer, const TensorT<T>& x,
                              const TensorT<T>& grad_out);

// ---- pooling. Max pooling windows are non-overlapping (stride == window)
// and trailing partial windows are dropped (floor division); each spatial
// extent must be at least the window extent. For rank-5 input the window is
// (wt, wh, ww); temporal window 1 preserves temporal extent.
template <typename T>
TensorT<T> maxpool_forward(int wt, int wh, int ww, const TensorT<T>& x,
                           MaxPoolCacheT<T>* cache = nullptr);
template <typename T>
TensorT<T> maxpool_backward(const MaxPoolCacheT<T>& cache, const TensorT<T>& grad_out);

// global average over every non-(batch,channel) axis: [N,C,...] -> [N,C]
template <typename T>
TensorT<T> global_avg_pool_forward(const TensorT<T>& x);
template <typename T>
TensorT<T> global_avg_pool_backward(const std::vector<int>& in_shape,
                                    const TensorT<T>& grad_out);

// ---- dense: x [in] or [batch, in]
template <typename T>
TensorT<T> dense_forward(const DenseLayerT<T>& layer, const TensorT<T>& x);
template <typename T>
DenseGradsT<T> dense_backward(const DenseLayerT<T>& layer, const TensorT<T>& x,
                              const TensorT<T>& grad_out);

// ---- activations / dropout
template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x);
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> softmax_forward(const TensorT<T>& x);  // over the last axis, per row
template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& grad_out);

// mask holds 0 or 1/(1-rate); eval mode returns an all-ones mask.
template <typename T>
TensorT<T> dropout_mask(float rate, std::vector<int> shape, bool train_mode, RngStream& rng);
template <typename T>
TensorT<T> apply_mask(const TensorT<T>& x, const TensorT<T>& mask);

// ---- batchnorm, channel axis 1, stats over every other axis.
// Train mode uses batch statistics (population variance) and updates the
// layer's running estimates in place.
template <typename T>
TensorT<T> batchnorm_forward(BatchNormLayerT<T>& layer, const TensorT<T>& x, bool train_mode,
                             BatchNormCacheT<T>* cache = nullptr);
template <typename T>
BatchNormGradsT<T> batchnorm_backward(const BatchNormLayerT<T>& layer,
                                      const BatchNormCacheT<T>& cache,
                                      const TensorT<T>& grad_out);

// ---- lstm over one sequence [steps, features] -> [steps, hidden];
// initial hidden and cell state are zero.
template <typename T>
TensorT<T> lstm_forward(const LSTMLayerT<T>& layer, const TensorT<T>& seq, bool train_mode,
                        RngStream& rng, LSTMCacheT<T>* cache = nullptr);
template <typename T>
LSTMGradsT<T> lstm_backward(const LSTMLayerT<T>& layer, const LSTMCacheT<T>& cache,
                            const TensorT<T>& grad_hidden_seq);

}  // namespace inflatenn
