#pragma once

#include <cstddef>
#include <vector>

#include "fvar/tensor.h"

namespace fvar {

// Row-wise softmax of a (rows, classes) tensor, computed with the usual
// max-subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

// Mean over rows of -log softmax(row)[label]. When `grad` is non-null it
// receives dLoss/dLogits, shape (rows, classes).
template <typename T>
T cross_entropy(const Tensor<T>& logits, std::size_t label, Tensor<T>* grad = nullptr);

// Average of the rows: the temporal consensus of per-position logits.
template <typename T>
std::vector<T> mean_rows(const Tensor<T>& logits);

std::size_t argmax(const std::vector<double>& scores);

}  // namespace fvar
