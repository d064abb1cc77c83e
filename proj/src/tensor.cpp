#include "inflatenn/tensor.hpp"

namespace inflatenn {

std::string shape_str(std::span<const int> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  if (a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  TensorT<T> out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      const T* arow = a.data() + static_cast<std::int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        acc += static_cast<double>(arow[p]) * static_cast<double>(b[static_cast<std::int64_t>(p) * n + j]);
      }
      out[static_cast<std::int64_t>(i) * n + j] = static_cast<T>(acc);
    }
  }
  return out;
}

Moments reduce_moments(std::span<const double> x) {
  if (x.empty()) throw DomainError("reduce_moments on empty input");
  double sum = 0.0;
  for (double v : x) sum += v;
  const double mean = sum / static_cast<double>(x.size());
  double sq = 0.0;
  for (double v : x) {
    const double d = v - mean;
    sq += d * d;
  }
  return {mean, sq / static_cast<double>(x.size())};
}

template <typename T>
Moments reduce_moments(const TensorT<T>& x) {
  if (x.empty()) throw DomainError("reduce_moments on empty input");
  double sum = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) sum += static_cast<double>(x[i]);
  const double mean = sum / static_cast<double>(x.size());
  double sq = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - mean;
    sq += d * d;
  }
  return {mean, sq / static_cast<double>(x.size())};
}

template <typename T>
TensorT<T> seeded_uniform(RngStream& rng, std::vector<int> shape, float lo, float hi) {
  if (!(lo < hi)) {
    throw DomainError("seeded_uniform requires lo < hi, got [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + ")");
  }
  TensorT<T> out(std::move(shape));
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(rng.uniform(lo, hi));
  }
  return out;
}

template class TensorT<float>;
template class TensorT<double>;
template Tensor matmul<float>(const Tensor&, const Tensor&);
template DTensor matmul<double>(const DTensor&, const DTensor&);
template Moments reduce_moments<float>(const Tensor&);
template Moments reduce_moments<double>(const DTensor&);
template Tensor seeded_uniform<float>(RngStream&, std::vector<int>, float, float);
template DTensor seeded_uniform<double>(RngStream&, std::vector<int>, float, float);

}  // namespace inflatenn
