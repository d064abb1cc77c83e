#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "inflatenn/tensor.hpp"

using namespace inflatenn;

namespace {

// triple-loop reference, independent of matmul's accumulation layout
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        acc += static_cast<double>(a.at({i, p})) * static_cast<double>(b.at({p, j}));
      }
      out.at({i, j}) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor identity(int n) {
  Tensor out({n, n});
  for (int i = 0; i < n; ++i) out.at({i, i}) = 1.0f;
  return out;
}

}  // namespace

TEST_CASE("matmul identity and counting") {
  RngStream rng(3);
  Tensor m = seeded_uniform<float>(rng, {3, 3}, -1.0f, 1.0f);
  Tensor lhs = matmul(identity(3), m);
  Tensor rhs = matmul(m, identity(3));
  for (std::int64_t i = 0; i < m.size(); ++i) {
    CHECK(lhs[i] == m[i]);
    CHECK(rhs[i] == m[i]);
  }

  Tensor ones23 = Tensor::full({2, 3}, 1.0f);
  Tensor ones32 = Tensor::full({3, 2}, 1.0f);
  Tensor prod = matmul(ones23, ones32);
  for (std::int64_t i = 0; i < prod.size(); ++i) CHECK(prod[i] == doctest::Approx(3.0));
}

TEST_CASE("matmul matches triple-loop oracle") {
  RngStream rng(7);
  Tensor a = seeded_uniform<float>(rng, {4, 5}, -2.0f, 2.0f);
  Tensor b = seeded_uniform<float>(rng, {5, 2}, -2.0f, 2.0f);
  Tensor got = matmul(a, b);
  Tensor want = matmul_oracle(a, b);
  REQUIRE(got.same_shape(want));
  for (std::int64_t i = 0; i < got.size(); ++i) {
    CHECK(std::fabs(got[i] - want[i]) <= 1e-6);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("reduce_moments closed forms") {
  Tensor c = Tensor::full({5}, 2.5f);
  Moments mc = reduce_moments(c);
  CHECK(mc.mean == doctest::Approx(2.5));
  CHECK(mc.var == doctest::Approx(0.0));

  Tensor sym({2}, {-1.0f, 1.0f});
  Moments ms = reduce_moments(sym);
  CHECK(ms.mean == doctest::Approx(0.0));
  CHECK(ms.var == doctest::Approx(1.0));
}

TEST_CASE("reduce_moments matches two-pass oracle on 100 seeded values") {
  RngStream rng(11);
  Tensor x = seeded_uniform<float>(rng, {100}, -3.0f, 5.0f);
  Moments got = reduce_moments(x);

  double sum = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) sum += x[i];
  const double mean = sum / 100.0;
  double sq = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) sq += (x[i] - mean) * (x[i] - mean);
  const double var = sq / 100.0;

  CHECK(std::fabs(got.mean - mean) <= 1e-7);
  CHECK(std::fabs(got.var - var) <= 1e-7);
}

TEST_CASE("reduce_moments rejects empty input") {
  std::vector<double> empty;
  CHECK_THROWS_AS(reduce_moments(std::span<const double>(empty)), DomainError);
}

TEST_CASE("moments are shift-equivariant in mean, shift-invariant in variance") {
  RngStream rng(13);
  Tensor x = seeded_uniform<float>(rng, {64}, -1.0f, 1.0f);
  Tensor shifted(x.shape());
  const float c = 7.25f;
  for (std::int64_t i = 0; i < x.size(); ++i) shifted[i] = x[i] + c;
  Moments mx = reduce_moments(x);
  Moments my = reduce_moments(shifted);
  CHECK(std::fabs(my.mean - (mx.mean + c)) <= 1e-6);
  CHECK(std::fabs(my.var - mx.var) <= 1e-6);
}

TEST_CASE("seeded_uniform determinism, bounds, statistics") {
  RngStream a(0), b(0);
  Tensor ta = seeded_uniform<float>(a, {4}, 0.0f, 1.0f);
  Tensor tb = seeded_uniform<float>(b, {4}, 0.0f, 1.0f);
  for (std::int64_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);

  RngStream c(5);
  const float eps = 1e-3f;
  Tensor narrow = seeded_uniform<float>(c, {256}, 5.0f, 5.0f + eps);
  for (std::int64_t i = 0; i < narrow.size(); ++i) {
    CHECK(narrow[i] >= 5.0f);
    CHECK(narrow[i] < 5.0f + eps);
  }

  RngStream d(42);
  Tensor big = seeded_uniform<float>(d, {10000}, 0.0f, 1.0f);
  CHECK(std::fabs(reduce_moments(big).mean - 0.5) < 0.02);

  RngStream e(1);
  CHECK_THROWS_AS(seeded_uniform<float>(e, {3}, 1.0f, 1.0f), DomainError);
}

TEST_CASE("rng streams are splittable and independent of parent state") {
  RngStream parent(99);
  RngStream child_before = parent.split(4);
  parent.next_u64();
  RngStream child_after = parent.split(4);
  CHECK(child_before.next_u64() == child_after.next_u64());
  // distinct stream ids give distinct sequences
  CHECK(parent.split(1).next_u64() != parent.split(2).next_u64());
}

TEST_CASE("row-major linearization, exhaustive over rank <= 4, extents <= 3") {
  for (int r = 1; r <= 4; ++r) {
    std::vector<int> shape(static_cast<std::size_t>(r));
    std::vector<int> extents = {2, 3, 2, 3};
    for (int i = 0; i < r; ++i) shape[static_cast<std::size_t>(i)] = extents[static_cast<std::size_t>(i)];
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);

    // strides derived from shape, innermost contiguous
    std::vector<std::int64_t> strides(static_cast<std::size_t>(r), 1);
    for (int axis = r - 2; axis >= 0; --axis) {
      strides[static_cast<std::size_t>(axis)] =
          strides[static_cast<std::size_t>(axis + 1)] * shape[static_cast<std::size_t>(axis + 1)];
    }
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    bool done = false;
    while (!done) {
      std::int64_t dot = 0;
      for (int axis = 0; axis < r; ++axis) {
        dot += idx[static_cast<std::size_t>(axis)] * strides[static_cast<std::size_t>(axis)];
      }
      CHECK(t.at(std::span<const int>(idx)) == static_cast<float>(dot));
      int axis = r - 1;
      while (axis >= 0) {
        if (++idx[static_cast<std::size_t>(axis)] < shape[static_cast<std::size_t>(axis)]) break;
        idx[static_cast<std::size_t>(axis)] = 0;
        --axis;
      }
      done = axis < 0;
    }
  }
}

TEST_CASE("tensor shape/data consistency is enforced") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0f, 2.0f}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  Tensor t({2, 2});
  CHECK_THROWS_AS(t.reshaped({3}), DimensionError);
}
