#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "inflatenn/inflate.hpp"
#include "inflatenn/model.hpp"

using namespace inflatenn;

namespace {

// closed-form parameter count from the layer declarations alone
std::int64_t closed_form_count(const ModelSpec& model) {
  std::int64_t n = 0;
  for (const auto& layer : model.layers) {
    switch (layer.kind) {
      case LayerKind::Conv2D:
        n += static_cast<std::int64_t>(layer.out_channels) * layer.in_channels * layer.kh *
                 layer.kw +
             layer.out_channels;
        break;
      case LayerKind::Conv3D:
        n += static_cast<std::int64_t>(layer.out_channels) * layer.in_channels * layer.kt *
                 layer.kh * layer.kw +
             layer.out_channels;
        break;
      case LayerKind::BatchNorm:
        n += 4LL * layer.channels;
        break;
      case LayerKind::Dense:
        n += static_cast<std::int64_t>(layer.out_features) * layer.in_features + layer.out_features;
        break;
      case LayerKind::LSTM:
        n += 4LL * layer.hidden_size * (layer.in_features + layer.hidden_size + 1);
        break;
      default:
        break;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("desk classifier ends in 7 softmaxed outputs") {
  RngStream rng(1);
  ModelSpec model = build_vgg_mini(Scale::Desk, Head::Classification, false, rng);
  RngStream fwd(0);
  Tensor batch({2, 3, 32, 24});
  Tensor out = model_forward(model, batch, false, fwd);
  REQUIRE(out.shape() == std::vector<int>{2, 7});
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 7; ++c) sum += out.at({r, c});
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("paper trunk records exactly four block boundaries") {
  RngStream rng(2);
  ModelSpec model = build_vgg_mini(Scale::Paper, Head::Regression, false, rng);
  CHECK(model.block_boundaries.size() == 4);
  for (int b : model.block_boundaries) {
    CHECK(model.layers[static_cast<std::size_t>(b)].kind == LayerKind::Conv2D);
  }
}

TEST_CASE("desk model parameter count matches the closed form") {
  RngStream rng(3);
  for (bool bn : {false, true}) {
    ModelSpec model = build_vgg_mini(Scale::Desk, Head::Regression, bn, rng);
    CHECK(parameter_count(model) == closed_form_count(model));
  }
}

TEST_CASE("cascade with paper lstm defaults has 1024 hidden units") {
  RngStream rng(4);
  ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
  ModelSpec cascade = build_cnn_lstm(trunk, 1024, {512, 256, 2}, rng);
  const LayerSpec* lstm = cascade.find_layer("lstm");
  REQUIRE(lstm != nullptr);
  CHECK(lstm->hidden_size == 1024);
  CHECK(lstm->dropout_rate == doctest::Approx(0.2f));
  CHECK(lstm->recurrent_dropout_rate == doctest::Approx(0.2f));
}

TEST_CASE("desk cascade maps a 16-frame clip batch to [2,2]") {
  RngStream rng(5);
  ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
  ModelSpec cascade = build_cnn_lstm(trunk, 64, {32, 16, 2}, rng);
  RngStream fwd(0);
  Tensor batch({2, 16, 3, 32, 24});
  Tensor out = model_forward(cascade, batch, false, fwd);
  CHECK(out.shape() == std::vector<int>{2, 2});
}

TEST_CASE("per-frame trunk outputs are identical on a temporally constant clip") {
  RngStream rng(6);
  ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
  RngStream data_rng(7);
  Tensor frame = seeded_uniform<float>(data_rng, {1, 3, 32, 24}, 0.0f, 1.0f);
  const int steps = 4;
  Tensor clip({steps, 3, 32, 24});
  for (int t = 0; t < steps; ++t) {
    std::copy_n(frame.data(), static_cast<std::size_t>(frame.size()),
                clip.data() + static_cast<std::int64_t>(t) * frame.size());
  }
  RngStream fwd(0);
  Tensor features = model_forward(trunk, clip, false, fwd);  // frames as batch
  const std::int64_t per_frame = features.size() / steps;
  for (int t = 1; t < steps; ++t) {
    for (std::int64_t i = 0; i < per_frame; ++i) {
      CHECK(features[static_cast<std::int64_t>(t) * per_frame + i] == features[i]);
    }
  }
}

TEST_CASE("build_cnn_lstm rejects a base with a head attached") {
  RngStream rng(8);
  ModelSpec full = build_vgg_mini(Scale::Desk, Head::Regression, false, rng);
  CHECK_THROWS_AS(build_cnn_lstm(full, 64, {32, 16, 2}, rng), CompositionError);
}

TEST_CASE("build_i3d applies the dilation schedule per block") {
  RngStream rng(9);
  ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
  InflationConfig cfg;
  cfg.dilation_schedule = {1, 2, 4, 8};
  ModelSpec i3d = build_i3d(trunk, cfg, rng);
  std::vector<int> dilations;
  for (const auto& layer : i3d.layers) {
    if (layer.kind == LayerKind::Conv3D) dilations.push_back(layer.temporal_dilation);
  }
  CHECK(dilations == std::vector<int>{1, 2, 4, 8});
}

TEST_CASE("i3d conv parameters are ~n times the 2d trunk conv parameters") {
  RngStream rng(10);
  ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
  InflationConfig cfg;  // n = 3
  ModelSpec i3d = build_i3d(trunk, cfg, rng);

  auto conv_weight_count = [](const ModelSpec& m, LayerKind kind) {
    std::int64_t n = 0;
    for (const auto& layer : m.layers) {
      if (layer.kind != kind) continue;
      auto it = m.weights.find(layer.name + ".weight");
      n += it->second.size();
    }
    return n;
  };
  const std::int64_t w2d = conv_weight_count(trunk, LayerKind::Conv2D);
  const std::int64_t w3d = conv_weight_count(i3d, LayerKind::Conv3D);
  CHECK(w3d == 3 * w2d);
  CHECK(parameter_count(i3d) == closed_form_count(i3d));
}

TEST_CASE("build_i3d output is [batch,2] on a clip") {
  RngStream rng(11);
  ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
  InflationConfig cfg;
  cfg.dilation_schedule = {1, 2, 4, 8};
  ModelSpec i3d = build_i3d(trunk, cfg, rng);
  RngStream fwd(0);
  Tensor clip({1, 3, 16, 32, 24});
  Tensor out = model_forward(i3d, clip, false, fwd);
  CHECK(out.shape() == std::vector<int>{1, 2});
}

TEST_CASE("empty layer list is the identity") {
  ModelSpec model;
  model.name = "empty";
  model.input_shape = {3, 4, 4};
  RngStream rng(0);
  Tensor batch({2, 3, 4, 4});
  for (std::int64_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<float>(i);
  Tensor out = model_forward(model, batch, false, rng);
  REQUIRE(out.same_shape(batch));
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == batch[i]);
}

TEST_CASE("repeated forward with fixed weights and seed is bit-identical") {
  RngStream rng(12);
  ModelSpec model = build_vgg_mini(Scale::Desk, Head::Regression, true, rng);
  RngStream data_rng(13);
  Tensor batch = seeded_uniform<float>(data_rng, {2, 3, 32, 24}, 0.0f, 1.0f);
  RngStream f1(5), f2(5);
  Tensor a = model_forward(model, batch, false, f1);
  Tensor b = model_forward(model, batch, false, f2);
  REQUIRE(a.same_shape(b));
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("shape inference agrees with runtime shapes layer by layer") {
  RngStream rng(14);
  SUBCASE("2d regression model") {
    ModelSpec model = build_vgg_mini(Scale::Desk, Head::Regression, true, rng);
    const auto shapes = infer_shapes(model, {2, 3, 32, 24});
    ModelSpec probe = model;
    RngStream fwd(0);
    ForwardTrace trace;
    Tensor out = model_forward(probe, Tensor({2, 3, 32, 24}), true, fwd, &trace);
    CHECK(shapes.back() == out.shape());
  }
  SUBCASE("cascade model") {
    ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
    ModelSpec cascade = build_cnn_lstm(trunk, 64, {32, 16, 2}, rng);
    const auto shapes = infer_shapes(cascade, {2, 8, 3, 32, 24});
    RngStream fwd(0);
    Tensor out = model_forward(cascade, Tensor({2, 8, 3, 32, 24}), false, fwd);
    CHECK(shapes.back() == out.shape());
  }
  SUBCASE("i3d model") {
    ModelSpec trunk = build_vgg_trunk(Scale::Desk, false, rng);
    InflationConfig cfg;
    cfg.dilation_schedule = {1, 2, 4, 8};
    ModelSpec i3d = build_i3d(trunk, cfg, rng);
    const auto shapes = infer_shapes(i3d, {1, 3, 16, 32, 24});
    RngStream fwd(0);
    Tensor out = model_forward(i3d, Tensor({1, 3, 16, 32, 24}), false, fwd);
    CHECK(shapes.back() == out.shape());
  }
}

TEST_CASE("first mismatching layer is reported by name") {
  RngStream rng(15);
  ModelSpec model = build_vgg_mini(Scale::Desk, Head::Regression, false, rng);
  RngStream fwd(0);
  Tensor wrong({1, 4, 32, 24});
  try {
    model_forward(model, wrong, false, fwd);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("conv1_1") != std::string::npos);
  }
}

TEST_CASE("residual block: skip_add forward and gradient flow") {
  RngStream rng(16);
  ModelSpec model;
  model.name = "mini-res";
  model.input_shape = {4, 6, 6};
  LayerSpec entry;
  entry.kind = LayerKind::ReLU;
  entry.name = "stem";
  model.layers.push_back(entry);
  append_residual_block(model, 4, "res1", rng);

  RngStream fwd(0);
  Tensor x = seeded_uniform<float>(rng, {2, 4, 6, 6}, -1.0f, 1.0f);
  ForwardTrace trace;
  Tensor out = model_forward(model, x, true, fwd, &trace);
  CHECK(out.same_shape(x));

  Tensor g = Tensor::full(out.shape(), 1.0f);
  GradMap grads = model_backward(model, trace, g);
  CHECK(grads.count("res1_a.weight") == 1);
  CHECK(grads.count("res1_b.weight") == 1);

  // whole-model gradient check on one conv weight entry against FD
  ModelSpec probe = model;
  auto loss = [&](ModelSpec& m) {
    RngStream r(0);
    Tensor y = model_forward(m, x, false, r);
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i];
    return acc;
  };
  Tensor& w = probe.weights.at("res1_a.weight");
  const double h = 1e-3;
  double worst = 0.0;
  for (std::int64_t i = 0; i < std::min<std::int64_t>(w.size(), 12); ++i) {
    const float keep = w[i];
    w[i] = keep + static_cast<float>(h);
    const double up = loss(probe);
    w[i] = keep - static_cast<float>(h);
    const double down = loss(probe);
    w[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double analytic = grads.at("res1_a.weight")[i];
    const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-4});
    worst = std::max(worst, std::fabs(fd - analytic) / denom);
  }
  CHECK(worst <= 2e-2);  // float storage limits FD agreement here
}

TEST_CASE("describe emits the layer table and parameter totals") {
  RngStream rng(17);
  ModelSpec model = build_vgg_mini(Scale::Desk, Head::Regression, false, rng);
  const std::string text = describe_model(model);
  CHECK(text.find("model: vgg_mini-desk") != std::string::npos);
  CHECK(text.find("conv1_1") != std::string::npos);
  CHECK(text.find("total_params:") != std::string::npos);
}
