#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "forgeseg/errors.hpp"

namespace forgeseg {

// Buffers start on a cache-line boundary. Vectorized reductions split their
// work by address alignment, so this keeps results independent of where the
// allocator happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// NCHW extents. Vectors are stored as N x C x 1 x 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
  }

  Tensor(Shape shape, const std::vector<T>& data)
      : Tensor(shape, AlignedVector<T>(data.begin(), data.end())) {}

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  std::span<T> sample(int n) {
    return std::span<T>(data_).subspan(n * shape_.sample_size(), shape_.sample_size());
  }
  std::span<const T> sample(int n) const {
    return std::span<const T>(data_).subspan(n * shape_.sample_size(), shape_.sample_size());
  }
  std::span<T> plane(int n, int c) {
    return std::span<T>(data_).subspan(offset(n, c, 0, 0), shape_.plane_size());
  }
  std::span<const T> plane(int n, int c) const {
    return std::span<const T>(data_).subspan(offset(n, c, 0, 0), shape_.plane_size());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  // Reinterprets the same buffer under a shape with equal element count.
  Tensor reshaped(Shape s) const& { return Tensor(s, data_); }
  Tensor reshaped(Shape s) && { return Tensor(s, std::move(data_)); }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  // Copies sample `src` of `from` into sample `dst` of this tensor.
  void set_sample(int dst, const Tensor& from, int src) {
    if (from.shape_.sample_size() != shape_.sample_size())
      throw DimensionError("sample size mismatch: " + from.shape_.str() + " vs " + shape_.str());
    auto s = from.sample(src);
    std::copy(s.begin(), s.end(), sample(dst).begin());
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(what) + ": shape " + a.shape().str() + " vs " +
                         b.shape().str());
}

}  // namespace forgeseg
