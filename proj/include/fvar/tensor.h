#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvar {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Thrown whenever an operation receives a tensor of the wrong shape. The
// message always carries the expected and the actual shape.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& where, const Shape& expected, const Shape& actual);
  ShapeError(const std::string& where, const std::string& expected, const Shape& actual);
};

// Dense row-major tensor. The leading dimension of activation tensors is the
// temporal (frame) axis: (frames, channels, height, width).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Number of elements per leading-axis slice.
  std::size_t frame_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }
  std::span<T> frame(std::size_t i) { return data().subspan(i * frame_size(), frame_size()); }
  std::span<const T> frame(std::size_t i) const { return data().subspan(i * frame_size(), frame_size()); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Stack equally-shaped per-frame tensors along a new leading axis.
template <typename T>
Tensor<T> stack_frames(std::span<const Tensor<T>> frames);

// Leading-axis slice [begin, begin+count).
template <typename T>
Tensor<T> slice_frames(const Tensor<T>& t, std::size_t begin, std::size_t count);

template <typename T>
double l2_distance(std::span<const T> a, std::span<const T> b);

template <typename T>
double l2_norm(std::span<const T> a);

}  // namespace fvar
