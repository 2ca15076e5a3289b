#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fvar/tensor.h"

namespace fvar {

// Numeric tags double as the on-disk kind tag of the checkpoint format.
enum class LayerKind : std::uint8_t {
  kConv2d = 1,
  kRelu = 2,
  kMaxPool2d = 3,
  kGlobalAvgPool = 4,
  kLinear = 5,
  kTemporalShift = 6,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // temporal-shift only: fraction of channels moved in each temporal direction.
  double shift_fraction = 0.0;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1);
  static LayerSpec relu();
  static LayerSpec maxpool2d(std::size_t kernel = 2);
  static LayerSpec global_avg_pool();
  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec temporal_shift(double fraction = 0.125);

  // Throws std::invalid_argument when the hyperparameters do not fit the kind.
  void validate() const;
  std::vector<Shape> parameter_shapes() const;
  // Input and output shapes include the leading frame axis.
  Shape output_shape(const Shape& input) const;

  bool operator==(const LayerSpec&) const = default;
};

// One recorded forward step. `saved` holds whatever the backward rule of the
// layer needs (input for conv/linear/relu, nothing for pooling and shift,
// whose routing lives in `indices` or is implied by the shape).
template <typename T>
struct TapeEntry {
  std::size_t layer = 0;
  Shape input_shape;
  Tensor<T> saved;
  std::vector<std::uint32_t> indices;
};

template <typename T>
class Tape {
 public:
  void record(TapeEntry<T> entry);
  const std::vector<TapeEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

  // Largest frame count among recorded intermediates. This is the per-video
  // memory proxy: N for a full pass, g after temporal aggregation.
  std::size_t stored_frames() const;
  // Total number of scalars kept alive for backward.
  std::size_t stored_values() const;

 private:
  template <typename>
  friend class Sequential;

  std::vector<TapeEntry<T>> entries_;
  bool consumed_ = false;
};

template <typename T>
struct Layer {
  LayerSpec spec;
  std::vector<Tensor<T>> params;

  Tensor<T> forward(const Tensor<T>& input, Tape<T>* tape, std::size_t index) const;
  // Accumulates into `param_grads` (one per param, same shapes) and returns
  // the gradient with respect to the layer input. With input_grad false,
  // layers that can skip that work return an empty tensor.
  Tensor<T> backward(const TapeEntry<T>& entry, const Tensor<T>& grad_output,
                     std::span<Tensor<T>> param_grads, bool input_grad = true) const;
};

template <typename T>
struct BackwardResult {
  Tensor<T> grad_input;
  // Flattened in layer order, matching Sequential::parameters().
  std::vector<Tensor<T>> param_grads;
};

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerSpec> specs);

  std::size_t num_layers() const { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return layers_.at(i); }
  Layer<T>& layer(std::size_t i) { return layers_.at(i); }
  std::vector<LayerSpec> specs() const;

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::size_t parameter_count() const;

  Shape output_shape(const Shape& input) const;

  Tensor<T> forward(const Tensor<T>& input, Tape<T>* tape = nullptr) const;
  // Consumes the tape. Replaying a consumed tape throws std::logic_error.
  // input_grad false leaves grad_input unspecified (possibly empty).
  BackwardResult<T> backward(Tape<T>& tape, const Tensor<T>& grad_output, bool input_grad = true) const;

  // He-normal weights, zero biases.
  void initialize(std::mt19937_64& rng);

  template <typename U>
  Sequential<U> cast() const {
    Sequential<U> out(specs());
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

 private:
  std::vector<Layer<T>> layers_;
};

// Zero-filled gradient buffers shaped like the parameters of `net`.
template <typename T>
std::vector<Tensor<T>> zero_like_parameters(const Sequential<T>& net);

}  // namespace fvar
