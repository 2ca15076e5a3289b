#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fvar/layers.h"

namespace fvar {

struct LayerFlops {
  LayerKind kind;
  std::uint64_t macs = 0;
};

// Multiply-accumulate counts. Only conv2d and linear contribute; pooling,
// ReLU and temporal shift are counted as zero.
struct FlopReport {
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
};

// `frame_shape` excludes the frame axis, e.g. (3, 32, 32).
FlopReport count_flops(std::span<const LayerSpec> layers, const Shape& frame_shape, std::size_t frames);

}  // namespace fvar
