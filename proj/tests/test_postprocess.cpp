#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "inflatenn/postprocess.hpp"

using namespace inflatenn;

namespace {

std::vector<double> seeded_series(std::uint64_t seed, int n) {
  RngStream rng(seed);
  std::vector<double> out;
  double smooth = 0.0;
  for (int i = 0; i < n; ++i) {
    smooth = 0.9 * smooth + 0.1 * rng.uniform(-1.0f, 1.0f);
    out.push_back(std::sin(i * 0.05) * 0.5 + smooth);
  }
  return out;
}

}  // namespace

TEST_CASE("fit_train_stats closed forms and degenerate inputs") {
  TargetStats stats = fit_train_stats({-1.0, 1.0}, {0.0, 0.0});
  CHECK(stats.label_mean == doctest::Approx(0.0));
  CHECK(stats.label_std == doctest::Approx(1.0));
  CHECK(stats.pred_mean == doctest::Approx(0.0));

  CHECK_THROWS_AS(fit_train_stats({0.5, 0.5, 0.5}, {0.1, 0.2, 0.3}), DegenerateStatsError);
  CHECK_THROWS_AS(fit_train_stats({}, {}), DomainError);
}

TEST_CASE("fit_train_stats matches the moments oracle on seeded input") {
  const auto labels = seeded_series(3, 200);
  const auto preds = seeded_series(4, 200);
  const TargetStats stats = fit_train_stats(labels, preds);
  const Moments ml = reduce_moments(std::span<const double>(labels));
  const Moments mp = reduce_moments(std::span<const double>(preds));
  CHECK(stats.label_mean == doctest::Approx(ml.mean).epsilon(1e-12));
  CHECK(stats.label_std == doctest::Approx(std::sqrt(ml.var)).epsilon(1e-12));
  CHECK(stats.pred_mean == doctest::Approx(mp.mean).epsilon(1e-12));
}

TEST_CASE("scale_normalize direct forms") {
  TargetStats stats{0.1, 0.2, 0.0};
  CHECK(scale_normalize({0.5}, stats)[0] == doctest::Approx(2.0));
  CHECK(scale_normalize({0.1}, stats)[0] == doctest::Approx(0.0));
}

TEST_CASE("scale_normalize standardizes the training labels themselves") {
  const auto labels = seeded_series(7, 500);
  const TargetStats stats = fit_train_stats(labels, labels);
  const auto normalized = scale_normalize(labels, stats);
  const Moments m = reduce_moments(std::span<const double>(normalized));
  CHECK(std::fabs(m.mean) <= 1e-6);
  CHECK(std::fabs(std::sqrt(m.var) - 1.0) <= 1e-6);
}

TEST_CASE("mean_filter follows the printed equation") {
  TargetStats stats;
  stats.label_mean = 0.1;
  stats.pred_mean = 0.2;
  CHECK(mean_filter({0.5}, stats)[0] == doctest::Approx(0.6));  // y' - 0.1 + 0.2

  stats.pred_mean = 0.1;  // equal means: identity
  CHECK(mean_filter({0.37}, stats)[0] == doctest::Approx(0.37));

  // the swapped variant moves predictions onto the label mean instead
  stats.label_mean = 0.3;
  stats.pred_mean = -0.1;
  const auto swapped = mean_filter({0.0, 1.0}, stats, true);
  CHECK(swapped[0] == doctest::Approx(0.4));
  CHECK(swapped[1] == doctest::Approx(1.4));
}

TEST_CASE("mean_filter preserves pcc exactly (constant shift)") {
  const auto labels = seeded_series(11, 300);
  auto preds = seeded_series(12, 300);
  for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = 0.6 * labels[i] + 0.4 * preds[i];
  TargetStats stats{0.25, 0.5, -0.15};
  const double before = compute_pcc({labels, preds});
  const double after = compute_pcc({labels, mean_filter(preds, stats)});
  CHECK(std::fabs(before - after) <= 1e-9);
}

TEST_CASE("time delay recovers zero shift on identical series") {
  const auto labels = seeded_series(15, 200);
  const DelayResult r = time_delay_align(labels, labels);
  CHECK(r.best_t == 0);
  CHECK(r.aligned_length == 200);
  CHECK(r.ccc_at_best == doctest::Approx(1.0));
}

TEST_CASE("time delay recovers every injected shift exactly") {
  const auto labels = seeded_series(19, 400);
  const int n = static_cast<int>(labels.size());
  for (int t = -10; t <= 10; ++t) {
    // construct preds so that preds[f + t] == labels[f] on the overlap
    std::vector<double> preds(labels.size(), 0.0);
    for (int f = 0; f < n; ++f) {
      const int dst = f + t;
      if (dst >= 0 && dst < n) preds[static_cast<std::size_t>(dst)] = labels[static_cast<std::size_t>(f)];
    }
    const DelayResult r = time_delay_align(labels, preds);
    CHECK(r.best_t == t);
    CHECK(r.aligned_length == n - std::abs(t));
    CHECK(r.ccc_at_best == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("uncorrelated noise gives a weak best ccc") {
  RngStream rng(23);
  std::vector<double> labels = seeded_series(29, 500);
  std::vector<double> noise;
  for (int i = 0; i < 500; ++i) noise.push_back(rng.uniform(-1.0f, 1.0f));
  const DelayResult r = time_delay_align(labels, noise);
  CHECK(r.ccc_at_best < 0.3);
}

TEST_CASE("series too short for the delay search is a domain error") {
  std::vector<double> tiny = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(time_delay_align(tiny, tiny), DomainError);
}

TEST_CASE("mean_filter preserves the delay argmax") {
  const auto labels = seeded_series(31, 300);
  const int n = static_cast<int>(labels.size());
  const int true_t = 4;
  std::vector<double> preds(labels.size(), 0.0);
  for (int f = 0; f < n; ++f) {
    const int dst = f + true_t;
    if (dst >= 0 && dst < n) preds[static_cast<std::size_t>(dst)] = labels[static_cast<std::size_t>(f)];
  }
  TargetStats stats{0.3, 0.7, -0.2};
  const DelayResult before = time_delay_align(labels, preds);
  const DelayResult after = time_delay_align(labels, mean_filter(preds, stats));
  CHECK(before.best_t == after.best_t);
}

TEST_CASE("the chain applies sn, mf, td in order with each step toggleable") {
  const auto labels = seeded_series(37, 300);
  auto preds = labels;
  for (double& v : preds) v = v * 2.0 + 0.5;  // affine distortion

  const TargetStats stats = fit_train_stats(labels, preds);

  PostprocessSteps none;
  CHECK(postprocess_chain(labels, preds, stats, none).preds == preds);

  PostprocessSteps sn_only;
  sn_only.scale_normalize = true;
  const auto sn = postprocess_chain(labels, preds, stats, sn_only);
  CHECK(sn.preds == scale_normalize(preds, stats));
  CHECK_FALSE(sn.delay_applied);

  PostprocessSteps all;
  all.scale_normalize = true;
  all.mean_filter = true;
  all.time_delay = true;
  const auto full = postprocess_chain(labels, preds, stats, all);
  CHECK(full.delay_applied);
  CHECK(full.delay.best_t == 0);
  CHECK(full.preds.size() == labels.size());
  // the chained series is exactly mf(sn(preds)) aligned at t=0
  const auto manual = mean_filter(scale_normalize(preds, stats), stats);
  for (std::size_t i = 0; i < manual.size(); ++i) {
    CHECK(full.preds[i] == doctest::Approx(manual[i]).epsilon(1e-12));
  }
}
