#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "inflatenn/errors.hpp"

namespace inflatenn {

std::string shape_str(std::span<const int> shape);

// Dense row-major N-d array. Storage is `T` (float in production paths,
// double for the test-side finite-difference instantiations); reductions
// always accumulate in 64-bit.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::int64_t offset(std::span<const int> index) const {
    std::int64_t off = 0;
    for (std::size_t axis = 0; axis < shape_.size(); ++axis) {
      off = off * shape_[axis] + index[axis];
    }
    return off;
  }

  T& at(std::span<const int> index) { return data_[static_cast<std::size_t>(offset(index))]; }
  const T& at(std::span<const int> index) const {
    return data_[static_cast<std::size_t>(offset(index))];
  }
  T& at(std::initializer_list<int> index) { return at(std::span<const int>(index.begin(), index.size())); }
  const T& at(std::initializer_list<int> index) const {
    return at(std::span<const int>(index.begin(), index.size()));
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  // Same storage reinterpreted under a new shape of equal element count.
  TensorT reshaped(std::vector<int> shape) const {
    if (checked_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return TensorT(std::move(shape), data_);
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

 private:
  static std::int64_t checked_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
      n *= e;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Counter-based splitmix64 stream: the value at position i is a pure function
// of (seed, i), so sequences are identical on every platform and streams can
// be split without sharing state. Sub-stream k of seed s is seeded with
// mix(s ^ (k + SPLIT_SALT) * MIX_MULT).
class RngStream {
 public:
  static constexpr const char* kAlgorithm = "splitmix64-counter";

  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return value_at(counter_++); }

  // [0,1) with 24-bit resolution; exactly representable in float.
  float next_float() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
  }

  float uniform(float lo, float hi) {
    float v = lo + next_float() * (hi - lo);
    return v < hi ? v : lo;  // rounding guard so the half-open bound holds
  }

  // [0,n) via 128-bit multiply-shift.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  RngStream split(std::uint64_t stream_id) const {
    return RngStream(mix(seed_ ^ ((stream_id + 0x517cc1b727220a95ULL) * 0x2545f4914f6cdd1dULL)));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t value_at(std::uint64_t i) const {
    return mix(seed_ + (i + 1) * 0x9e3779b97f4a7c15ULL);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population variance (divide by n)
};

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
Moments reduce_moments(const TensorT<T>& x);

Moments reduce_moments(std::span<const double> x);

template <typename T>
TensorT<T> seeded_uniform(RngStream& rng, std::vector<int> shape, float lo, float hi);

template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace inflatenn
