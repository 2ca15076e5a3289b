#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fvar/clustering.h"
#include "fvar/layers.h"

namespace fvar {

enum class Precision { kFloat32, kFloat64 };

std::string_view to_string(Precision p);
Precision precision_from_string(std::string_view name);

struct PipelineConfig {
  std::uint32_t g = 8;
  ClusteringMethod method = ClusteringMethod::kCumulative;
  std::size_t frames_per_video = 32;
  std::size_t num_classes = 4;
  // kNone only: number of uniformly sampled frames per video (0 = all).
  std::size_t sampled_frames = 0;
  // Evaluation shortcut for parity experiments: when non-zero, evaluation
  // ignores the clustering path and averages this many sampled frames.
  std::size_t eval_sampled_frames = 0;
  bool temporal_shift = false;
  Precision precision = Precision::kFloat32;
  // Per-frame input shape (channels, height, width).
  Shape frame_shape{3, 32, 32};
  // Block 1 ends with the convolution whose pre-ReLU output is clustered.
  std::vector<LayerSpec> block1;
  std::vector<LayerSpec> rest;

  // Desk-scale backbone: conv(3->8) | relu, maxpool, [shift], conv(8->16),
  // relu, global-avg-pool, linear(16->classes).
  static PipelineConfig desk_scale(std::uint32_t g, ClusteringMethod method, std::size_t classes = 4,
                                   bool temporal_shift = false);
  void rebuild_default_blocks();

  // Frames entering blocks 2+ per video.
  std::size_t positions() const;
  // Frames entering block 1 per video.
  std::size_t block1_frames() const;

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

template <typename T>
struct Backbone {
  Sequential<T> block1;
  Sequential<T> rest;

  static Backbone from_config(const PipelineConfig& config);
  void initialize(std::uint64_t seed);

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;

  template <typename U>
  Backbone<U> cast() const {
    return Backbone<U>{block1.template cast<U>(), rest.template cast<U>()};
  }
};

// g representative maps per video: the mean pre-ReLU block-1 map of each
// cluster, padded by repeating the last cluster when fewer than g exist.
template <typename T>
struct AggregatedBatch {
  Tensor<T> activations;
  ClusterAssignment assignment;
  // Sizes of the real clusters, in temporal order.
  std::vector<std::size_t> cluster_sizes;
};

template <typename T>
AggregatedBatch<T> aggregate(const Tensor<T>& block1_preact, const ClusterAssignment& assignment, std::uint32_t g);

// Adjoint of aggregate(): routes gradients of the g aggregated maps back to
// the frames that formed them.
template <typename T>
Tensor<T> aggregate_backward(const Tensor<T>& grad_aggregated, const AggregatedBatch<T>& batch,
                             const Shape& frames_shape);

// State of one video's forward pass, consumed by backward().
template <typename T>
struct VideoPass {
  std::size_t label = 0;
  Tape<T> block1_tape;
  Tape<T> rest_tape;
  bool clustered = false;
  AggregatedBatch<T> batch;
  Shape block1_out_shape;
  Tensor<T> logits;       // (positions, classes)
  std::vector<T> scores;  // temporal mean of logits
  T loss{};
};

template <typename T>
struct PipelineGradients {
  // Block-1 parameters first, then blocks 2+.
  std::vector<Tensor<T>> params;
};

// Every frame through every block; logits averaged over frames, loss is the
// mean per-frame cross-entropy.
template <typename T>
VideoPass<T> forward_full(const Backbone<T>& net, const Tensor<T>& frames, std::size_t label);

// Block 1 on all frames, cluster, aggregate pre-ReLU maps, remaining blocks
// on the g aggregates. Loss is the mean cross-entropy over the g positions.
template <typename T>
VideoPass<T> forward_clustered(const Backbone<T>& net, const Tensor<T>& frames, std::size_t label,
                               ClusteringMethod method, std::uint32_t g);

template <typename T>
PipelineGradients<T> backward(const Backbone<T>& net, VideoPass<T>& pass);

// Frame indices for a TSN-style uniform sub-sample: one frame per equal
// segment, centred when `rng` is null, random within the segment otherwise.
std::vector<std::size_t> sample_frame_indices(std::size_t n_frames, std::size_t count, std::mt19937_64* rng);

template <typename T>
Tensor<T> select_frames(const Tensor<T>& frames, std::span<const std::size_t> indices);

// Config-driven entry point used by the trainer. `rng` drives training-time
// frame sampling; pass null for deterministic evaluation.
template <typename T>
VideoPass<T> forward_video(const Backbone<T>& net, const PipelineConfig& config, const Tensor<T>& frames,
                           std::size_t label, bool training, std::mt19937_64* rng);

// Appends copies of the final frame until `target_len` frames exist.
// Rejects empty input and target_len below the current length.
template <typename Frame>
std::vector<Frame> pad_video(std::vector<Frame> frames, std::size_t target_len) {
  if (frames.empty()) throw std::invalid_argument("pad_video: no frames");
  if (target_len < frames.size()) {
    throw std::invalid_argument("pad_video: target length " + std::to_string(target_len) +
                                " is shorter than the video (" + std::to_string(frames.size()) + ")");
  }
  const Frame last = frames.back();
  frames.resize(target_len, last);
  return frames;
}

template <typename T>
Tensor<T> pad_frames(const Tensor<T>& frames, std::size_t target_len);

struct PipelineFlops {
  std::uint64_t block1 = 0;
  std::uint64_t rest = 0;
  std::uint64_t total = 0;
};

// Multiply-accumulates per video for the configured pipeline.
PipelineFlops pipeline_flops(const PipelineConfig& config);

// Pre-activation taps at the end of each conv block for single-frame passes
// (no clustering): [block-1 conv output, block-2 conv output, ...].
template <typename T>
std::vector<Tensor<T>> block_taps(const Backbone<T>& net, const Tensor<T>& frames);

}  // namespace fvar
