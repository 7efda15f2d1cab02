#ifndef GEODEPTH_TENSOR_HPP
#define GEODEPTH_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "geodepth/errors.hpp"

namespace geodepth {

/// Dense 4-d shape (n, c, h, w). Images use n = 1; conv weights use
/// (out, in, k, k).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

inline Shape image_shape(int c, int h, int w) { return Shape{1, c, h, w}; }
inline Shape scalar_shape() { return Shape{1, 1, 1, 1}; }

/// Row-major dense tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data size does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int channels() const noexcept { return shape_.c; }
  int height() const noexcept { return shape_.h; }
  int width() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element of image n = 0.
  T& at(int c, int y, int x) noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_.h + y) * shape_.w + x];
  }
  const T& at(int c, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_.h + y) * shape_.w + x];
  }

  std::span<T> channel(int c) noexcept {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane(), shape_.plane());
  }
  std::span<const T> channel(int c) const noexcept {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane(),
                                             shape_.plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{1, 1, 1, 1};
  std::vector<T> data_ = std::vector<T>(1, T(0));
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out(src.shape());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

/// Channels [first, first + count) of an image tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& src, int first, int count) {
  if (first < 0 || count <= 0 || first + count > src.channels()) {
    throw ShapeError("channel slice out of range for " + src.shape().str());
  }
  Tensor<T> out(image_shape(count, src.height(), src.width()));
  std::copy_n(src.data() + static_cast<std::size_t>(first) * src.shape().plane(), out.size(),
              out.data());
  return out;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

/// Block-average downsampling by an integer factor (image content, no gradient).
template <typename T>
Tensor<T> downsample_area(const Tensor<T>& src, int factor) {
  if (factor == 1) return src;
  const int h = src.height() / factor;
  const int w = src.width() / factor;
  Tensor<T> out(image_shape(src.channels(), h, w));
  const T norm = T(1) / static_cast<T>(factor * factor);
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        T acc = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) acc += src.at(c, y * factor + dy, x * factor + dx);
        }
        out.at(c, y, x) = acc * norm;
      }
    }
  }
  return out;
}

}  // namespace geodepth

#endif  // GEODEPTH_TENSOR_HPP
