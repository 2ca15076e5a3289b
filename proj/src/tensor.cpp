#include "fvar/tensor.h"

#include <cstring>

namespace fvar {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ShapeError::ShapeError(const std::string& where, const Shape& expected, const Shape& actual)
    : ShapeError(where, shape_string(expected), actual) {}

ShapeError::ShapeError(const std::string& where, const std::string& expected, const Shape& actual)
    : std::invalid_argument(where + ": expected shape " + expected + ", got " + shape_string(actual)) {}

template <typename T>
Tensor<T> stack_frames(std::span<const Tensor<T>> frames) {
  if (frames.empty()) throw std::invalid_argument("stack_frames: no frames");
  const Shape& inner = frames[0].shape();
  Shape shape{frames.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor<T> out(shape);
  const std::size_t n = frames[0].size();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].shape() != inner) throw ShapeError("stack_frames", inner, frames[i].shape());
    std::memcpy(out.data().data() + i * n, frames[i].data().data(), n * sizeof(T));
  }
  return out;
}

template <typename T>
Tensor<T> slice_frames(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  if (t.rank() == 0 || begin + count > t.dim(0)) {
    throw std::out_of_range("slice_frames: [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") outside " + shape_string(t.shape()));
  }
  Shape shape = t.shape();
  shape[0] = count;
  const std::size_t fs = t.frame_size();
  std::vector<T> data(t.data().begin() + begin * fs, t.data().begin() + (begin + count) * fs);
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
double l2_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("l2_distance: length " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename T>
double l2_norm(std::span<const T> a) {
  double acc = 0.0;
  for (T v : a) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

#define FVAR_INSTANTIATE(T)                                                             \
  template Tensor<T> stack_frames<T>(std::span<const Tensor<T>>);                       \
  template Tensor<T> slice_frames<T>(const Tensor<T>&, std::size_t, std::size_t);       \
  template double l2_distance<T>(std::span<const T>, std::span<const T>);               \
  template double l2_norm<T>(std::span<const T>);

FVAR_INSTANTIATE(float)
FVAR_INSTANTIATE(double)
#undef FVAR_INSTANTIATE

}  // namespace fvar
