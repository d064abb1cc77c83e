#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "inflatenn/layers.hpp"
#include "inflatenn/train.hpp"

using namespace inflatenn;

namespace {

// Loss = sum(G . forward(...)): linear in the output, so the analytic
// gradient w.r.t. any parameter is backward(grad_out = G).
DTensor loss_weights(std::vector<int> shape, std::uint64_t seed) {
  RngStream rng(seed);
  return seeded_uniform<double>(rng, std::move(shape), -1.0f, 1.0f);
}

double weighted_sum(const DTensor& y, const DTensor& g) {
  REQUIRE(y.same_shape(g));
  double acc = 0.0;
  for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i] * g[i];
  return acc;
}

// Central differences with h = 1e-3 on the 64-bit path; relative error
// guard floor 1e-6 absorbs exactly-zero gradients.
void check_against_fd(DTensor& param, const DTensor& analytic,
                      const std::function<double()>& loss, double tol = 1e-4) {
  REQUIRE(param.same_shape(analytic));
  const double h = 1e-3;
  double worst = 0.0;
  for (std::int64_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + h;
    const double up = loss();
    param[i] = keep - h;
    const double down = loss();
    param[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-6});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("zero grad_out gives zero gradients (linearity)") {
  RngStream rng(1);
  Conv2DLayerT<double> layer;
  layer.weights = seeded_uniform<double>(rng, {2, 2, 3, 3}, -0.5f, 0.5f);
  layer.bias = seeded_uniform<double>(rng, {2}, -0.1f, 0.1f);
  layer.pad = 1;
  DTensor x = seeded_uniform<double>(rng, {1, 2, 4, 4}, -1.0f, 1.0f);
  DTensor y = conv2d_forward(layer, x);
  auto grads = conv2d_backward(layer, x, DTensor(y.shape()));
  for (std::int64_t i = 0; i < grads.input.size(); ++i) CHECK(grads.input[i] == 0.0);
  for (std::int64_t i = 0; i < grads.weights.size(); ++i) CHECK(grads.weights[i] == 0.0);
  for (std::int64_t i = 0; i < grads.bias.size(); ++i) CHECK(grads.bias[i] == 0.0);
}

TEST_CASE("dense weight gradient is the outer product of grad_out and input") {
  RngStream rng(2);
  DenseLayerT<double> layer;
  layer.weights = seeded_uniform<double>(rng, {3, 4}, -1.0f, 1.0f);
  layer.bias = seeded_uniform<double>(rng, {3}, -1.0f, 1.0f);
  DTensor x = seeded_uniform<double>(rng, {1, 4}, -1.0f, 1.0f);
  DTensor g = seeded_uniform<double>(rng, {1, 3}, -1.0f, 1.0f);
  auto grads = dense_backward(layer, x, g);
  for (int o = 0; o < 3; ++o) {
    for (int i = 0; i < 4; ++i) {
      CHECK(grads.weights.at({o, i}) == doctest::Approx(g[o] * x[i]).epsilon(1e-12));
    }
    CHECK(grads.bias[o] == doctest::Approx(g[o]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients match central finite differences") {
  RngStream rng(3);
  Conv2DLayerT<double> layer;
  layer.weights = seeded_uniform<double>(rng, {3, 2, 3, 3}, -0.5f, 0.5f);
  layer.bias = seeded_uniform<double>(rng, {3}, -0.2f, 0.2f);
  layer.pad = 1;
  layer.stride = 2;
  DTensor x = seeded_uniform<double>(rng, {2, 2, 5, 6}, -1.0f, 1.0f);
  const DTensor g = loss_weights({2, 3, 3, 3}, 99);

  const auto grads = conv2d_backward(layer, x, g);
  auto loss = [&] { return weighted_sum(conv2d_forward(layer, x), g); };
  check_against_fd(layer.weights, grads.weights, loss);
  check_against_fd(layer.bias, grads.bias, loss);
  check_against_fd(x, grads.input, loss);
}

TEST_CASE("conv3d gradients match central finite differences (dilation 2)") {
  RngStream rng(4);
  Conv3DLayerT<double> layer;
  layer.weights = seeded_uniform<double>(rng, {2, 2, 3, 3, 3}, -0.5f, 0.5f);
  layer.bias = seeded_uniform<double>(rng, {2}, -0.2f, 0.2f);
  layer.pad = 1;
  layer.temporal_pad = 2;
  layer.temporal_dilation = 2;
  DTensor x = seeded_uniform<double>(rng, {1, 2, 6, 4, 5}, -1.0f, 1.0f);
  DTensor probe = conv3d_forward(layer, x);
  const DTensor g = loss_weights(probe.shape(), 98);

  const auto grads = conv3d_backward(layer, x, g);
  auto loss = [&] { return weighted_sum(conv3d_forward(layer, x), g); };
  check_against_fd(layer.weights, grads.weights, loss);
  check_against_fd(layer.bias, grads.bias, loss);
  check_against_fd(x, grads.input, loss);
}

TEST_CASE("dense gradients match central finite differences") {
  RngStream rng(5);
  DenseLayerT<double> layer;
  layer.weights = seeded_uniform<double>(rng, {4, 6}, -0.7f, 0.7f);
  layer.bias = seeded_uniform<double>(rng, {4}, -0.3f, 0.3f);
  DTensor x = seeded_uniform<double>(rng, {3, 6}, -1.0f, 1.0f);
  const DTensor g = loss_weights({3, 4}, 97);

  const auto grads = dense_backward(layer, x, g);
  auto loss = [&] { return weighted_sum(dense_forward(layer, x), g); };
  check_against_fd(layer.weights, grads.weights, loss);
  check_against_fd(layer.bias, grads.bias, loss);
  check_against_fd(x, grads.input, loss);
}

TEST_CASE("batchnorm train-mode gradients match central finite differences") {
  RngStream rng(6);
  DTensor x = seeded_uniform<double>(rng, {3, 2, 4, 3}, -2.0f, 2.0f);
  const DTensor g = loss_weights(x.shape(), 96);

  auto fresh_layer = [&] {
    BatchNormLayerT<double> layer;
    layer.scale = DTensor({2}, {1.3, 0.8});
    layer.offset = DTensor({2}, {0.1, -0.4});
    layer.running_mean = DTensor({2});
    layer.running_var = DTensor::full({2}, 1.0);
    return layer;
  };

  BatchNormLayerT<double> layer = fresh_layer();
  BatchNormCacheT<double> cache;
  batchnorm_forward(layer, x, true, &cache);
  const auto grads = batchnorm_backward(layer, cache, g);

  // running-stat updates do not feed the loss; rebuild per evaluation
  auto loss_with = [&](DTensor* scale, DTensor* offset) {
    return [&, scale, offset] {
      BatchNormLayerT<double> probe = fresh_layer();
      if (scale) probe.scale = *scale;
      if (offset) probe.offset = *offset;
      return weighted_sum(batchnorm_forward(probe, x, true), g);
    };
  };
  DTensor scale = layer.scale, offset = layer.offset;
  check_against_fd(scale, grads.scale, loss_with(&scale, nullptr));
  check_against_fd(offset, grads.offset, loss_with(nullptr, &offset));
  auto loss_x = [&] {
    BatchNormLayerT<double> probe = fresh_layer();
    return weighted_sum(batchnorm_forward(probe, x, true), g);
  };
  check_against_fd(x, grads.input, loss_x);
}

TEST_CASE("lstm gradients through 3 steps match central finite differences") {
  const int steps = 3, feat = 4, hidden = 5;
  RngStream rng(7);
  LSTMLayerT<double> layer;
  layer.hidden_size = hidden;
  layer.w_input = seeded_uniform<double>(rng, {4 * hidden, feat}, -0.5f, 0.5f);
  layer.w_recurrent = seeded_uniform<double>(rng, {4 * hidden, hidden}, -0.5f, 0.5f);
  layer.bias = seeded_uniform<double>(rng, {4 * hidden}, -0.2f, 0.2f);
  DTensor seq = seeded_uniform<double>(rng, {steps, feat}, -1.0f, 1.0f);
  const DTensor g = loss_weights({steps, hidden}, 95);

  RngStream fwd(0);
  LSTMCacheT<double> cache;
  lstm_forward(layer, seq, false, fwd, &cache);
  const auto grads = lstm_backward(layer, cache, g);

  auto loss = [&] {
    RngStream r(0);
    return weighted_sum(lstm_forward(layer, seq, false, r), g);
  };
  check_against_fd(layer.w_input, grads.w_input, loss);
  check_against_fd(layer.w_recurrent, grads.w_recurrent, loss);
  check_against_fd(layer.bias, grads.bias, loss);
  check_against_fd(seq, grads.input, loss);
}

TEST_CASE("pooling gradients match central finite differences") {
  RngStream rng(8);
  DTensor x = seeded_uniform<double>(rng, {2, 2, 4, 6}, -1.0f, 1.0f);

  SUBCASE("max pooling") {
    const DTensor g = loss_weights({2, 2, 2, 3}, 94);
    MaxPoolCacheT<double> cache;
    maxpool_forward(1, 2, 2, x, &cache);
    const DTensor gin = maxpool_backward(cache, g);
    auto loss = [&] { return weighted_sum(maxpool_forward<double>(1, 2, 2, x), g); };
    check_against_fd(x, gin, loss);
  }

  SUBCASE("global average pooling") {
    const DTensor g = loss_weights({2, 2}, 93);
    const DTensor gin = global_avg_pool_backward(x.shape(), g);
    auto loss = [&] { return weighted_sum(global_avg_pool_forward(x), g); };
    check_against_fd(x, gin, loss);
  }
}

TEST_CASE("relu and softmax gradients match central finite differences") {
  RngStream rng(9);
  DTensor x = seeded_uniform<double>(rng, {3, 6}, -1.0f, 1.0f);
  // keep inputs away from the relu kink relative to h
  for (std::int64_t i = 0; i < x.size(); ++i) {
    if (std::fabs(x[i]) < 0.01) x[i] = 0.05;
  }

  SUBCASE("relu") {
    const DTensor g = loss_weights(x.shape(), 92);
    const DTensor gin = relu_backward(x, g);
    auto loss = [&] { return weighted_sum(relu_forward(x), g); };
    check_against_fd(x, gin, loss);
  }

  SUBCASE("softmax") {
    const DTensor g = loss_weights(x.shape(), 91);
    const DTensor y = softmax_forward(x);
    const DTensor gin = softmax_backward(y, g);
    auto loss = [&] { return weighted_sum(softmax_forward(x), g); };
    check_against_fd(x, gin, loss);
  }
}

TEST_CASE("loss gradients match central finite differences") {
  RngStream rng(10);

  SUBCASE("mse") {
    DTensor preds = seeded_uniform<double>(rng, {4, 2}, -1.0f, 1.0f);
    const DTensor targets = seeded_uniform<double>(rng, {4, 2}, -1.0f, 1.0f);
    const auto lg = mse_loss(preds, targets);
    auto loss = [&] { return mse_loss(preds, targets).loss; };
    check_against_fd(preds, lg.grad, loss, 1e-6);
  }

  SUBCASE("weighted cross entropy") {
    DTensor logits = seeded_uniform<double>(rng, {3, 5}, -2.0f, 2.0f);
    const std::vector<int> classes = {1, 4, 0};
    const std::vector<double> weights = {1.0, 2.0, 0.5, 1.5, 0.7};
    const auto lg = weighted_ce_loss(logits, classes, weights);
    auto loss = [&] { return weighted_ce_loss(logits, classes, weights).loss; };
    check_against_fd(logits, lg.grad, loss, 1e-5);
  }
}

TEST_CASE("dropout backward reuses the forward mask exactly") {
  RngStream rng(11);
  DTensor mask = dropout_mask<double>(0.3f, {64}, true, rng);
  DTensor g = seeded_uniform<double>(rng, {64}, -1.0f, 1.0f);
  DTensor gin = apply_mask(g, mask);
  for (std::int64_t i = 0; i < g.size(); ++i) CHECK(gin[i] == g[i] * mask[i]);
}
