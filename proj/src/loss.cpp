#include "fvar/loss.h"

#include <algorithm>
#include <cmath>

namespace fvar {

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows", "(rows, classes)", logits.shape());
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data().data() + r * classes;
    T* q = out.data().data() + r * classes;
    const T zmax = *std::max_element(z, z + classes);
    T sum = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      q[c] = std::exp(z[c] - zmax);
      sum += q[c];
    }
    for (std::size_t c = 0; c < classes; ++c) q[c] /= sum;
  }
  return out;
}

template <typename T>
T cross_entropy(const Tensor<T>& logits, std::size_t label, Tensor<T>* grad) {
  if (logits.rank() != 2 || logits.dim(0) == 0) throw ShapeError("cross_entropy", "(rows>0, classes)", logits.shape());
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (label >= classes) throw std::out_of_range("cross_entropy: label out of range");
  if (grad) *grad = Tensor<T>(logits.shape());
  T total = 0;
  const T inv_rows = T{1} / static_cast<T>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data().data() + r * classes;
    const T zmax = *std::max_element(z, z + classes);
    T sum = 0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const T log_sum = std::log(sum) + zmax;
    total += log_sum - z[label];
    if (grad) {
      T* g = grad->data().data() + r * classes;
      for (std::size_t c = 0; c < classes; ++c) {
        const T q = std::exp(z[c] - log_sum);
        g[c] = (q - (c == label ? T{1} : T{0})) * inv_rows;
      }
    }
  }
  return total * inv_rows;
}

template <typename T>
std::vector<T> mean_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(0) == 0) throw ShapeError("mean_rows", "(rows>0, classes)", logits.shape());
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  std::vector<T> out(classes, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < classes; ++c) out[c] += logits[r * classes + c];
  }
  for (auto& v : out) v /= static_cast<T>(rows);
  return out;
}

std::size_t argmax(const std::vector<double>& scores) {
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);
template float cross_entropy(const Tensor<float>&, std::size_t, Tensor<float>*);
template double cross_entropy(const Tensor<double>&, std::size_t, Tensor<double>*);
template std::vector<float> mean_rows(const Tensor<float>&);
template std::vector<double> mean_rows(const Tensor<double>&);

}  // namespace fvar
