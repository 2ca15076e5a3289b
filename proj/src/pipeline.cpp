#include "fvar/pipeline.h"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "fvar/flops.h"
#include "fvar/loss.h"

namespace fvar {

std::string_view to_string(Precision p) { return p == Precision::kFloat64 ? "float64" : "float32"; }

Precision precision_from_string(std::string_view name) {
  if (name == "float32") return Precision::kFloat32;
  if (name == "float64") return Precision::kFloat64;
  throw std::invalid_argument("unknown precision '" + std::string(name) + "'");
}

PipelineConfig PipelineConfig::desk_scale(std::uint32_t g, ClusteringMethod method, std::size_t classes,
                                          bool temporal_shift) {
  PipelineConfig c;
  c.g = g;
  c.method = method;
  c.num_classes = classes;
  c.temporal_shift = temporal_shift;
  c.rebuild_default_blocks();
  return c;
}

void PipelineConfig::rebuild_default_blocks() {
  const std::size_t channels = frame_shape.empty() ? 3 : frame_shape[0];
  block1 = {LayerSpec::conv2d(channels, 8, 3)};
  rest = {LayerSpec::relu(), LayerSpec::maxpool2d(2)};
  if (temporal_shift) rest.push_back(LayerSpec::temporal_shift(0.125));
  rest.push_back(LayerSpec::conv2d(8, 16, 3));
  rest.push_back(LayerSpec::relu());
  rest.push_back(LayerSpec::global_avg_pool());
  rest.push_back(LayerSpec::linear(16, num_classes));
}

std::size_t PipelineConfig::block1_frames() const {
  return method == ClusteringMethod::kNone && sampled_frames > 0 ? sampled_frames : frames_per_video;
}

std::size_t PipelineConfig::positions() const {
  return method == ClusteringMethod::kNone ? block1_frames() : g;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("pipeline config: " + why); };
  if (frames_per_video == 0) fail("frames_per_video must be positive");
  if (num_classes < 2) fail("need at least two classes");
  if (method != ClusteringMethod::kNone && (g < 1 || g > frames_per_video)) {
    fail("g must lie in [1, frames_per_video], got " + std::to_string(g));
  }
  if (sampled_frames > frames_per_video) fail("sampled_frames exceeds frames_per_video");
  if (sampled_frames > 0 && method != ClusteringMethod::kNone) fail("frame sub-sampling requires method 'none'");
  if (eval_sampled_frames > frames_per_video) fail("eval_sampled_frames exceeds frames_per_video");
  if (frame_shape.size() != 3) fail("frame_shape must be (channels, height, width)");
  if (block1.empty() || block1.back().kind != LayerKind::kConv2d) fail("block 1 must end with a conv2d layer");
  if (rest.empty()) fail("blocks 2+ are empty");
  bool has_shift = false;
  for (const auto& s : rest) has_shift = has_shift || s.kind == LayerKind::kTemporalShift;
  for (const auto& s : block1) {
    if (s.kind == LayerKind::kTemporalShift) fail("temporal shift is only supported after aggregation");
  }
  if (has_shift != temporal_shift) fail("temporal_shift flag disagrees with the layer list");
  Shape shape{1, frame_shape[0], frame_shape[1], frame_shape[2]};
  try {
    for (const auto& s : block1) {
      s.validate();
      shape = s.output_shape(shape);
    }
    for (const auto& s : rest) {
      s.validate();
      shape = s.output_shape(shape);
    }
  } catch (const std::invalid_argument& e) {
    fail(std::string("layer stack does not compose: ") + e.what());
  }
  if (shape != Shape{1, num_classes}) fail("network output " + shape_string(shape) + " is not (1, classes)");
}

// ---------------------------------------------------------------------------

template <typename T>
Backbone<T> Backbone<T>::from_config(const PipelineConfig& config) {
  config.validate();
  return Backbone<T>{Sequential<T>(config.block1), Sequential<T>(config.rest)};
}

template <typename T>
void Backbone<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  block1.initialize(rng);
  rest.initialize(rng);
}

template <typename T>
std::vector<Tensor<T>*> Backbone<T>::parameters() {
  auto out = block1.parameters();
  for (auto* p : rest.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Backbone<T>::parameters() const {
  auto out = block1.parameters();
  for (const auto* p : rest.parameters()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
AggregatedBatch<T> aggregate(const Tensor<T>& pre, const ClusterAssignment& assignment, std::uint32_t g) {
  if (pre.rank() < 2) throw ShapeError("aggregate", "(frames, ...)", pre.shape());
  if (assignment.frames() != pre.dim(0)) {
    throw std::invalid_argument("aggregate: assignment covers " + std::to_string(assignment.frames()) +
                                " frames, activations hold " + std::to_string(pre.dim(0)));
  }
  const auto segments = assignment.segments();
  if (g < 1 || segments.size() > g) throw std::invalid_argument("aggregate: more clusters than g");
  AggregatedBatch<T> batch;
  batch.assignment = assignment;
  Shape shape = pre.shape();
  shape[0] = g;
  batch.activations = Tensor<T>(shape);
  const std::size_t fs = pre.frame_size();
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto [begin, end] = segments[k];
    const std::size_t n = end - begin;
    batch.cluster_sizes.push_back(n);
    T* dst = batch.activations.data().data() + k * fs;
    const T* first = pre.data().data() + begin * fs;
    // mean = first + sum(x_i - first) / n, which returns the member itself
    // exactly for singletons and for clusters of identical maps.
    std::fill(dst, dst + fs, T{0});
    for (std::size_t f = begin + 1; f < end; ++f) {
      const T* src = pre.data().data() + f * fs;
      for (std::size_t j = 0; j < fs; ++j) dst[j] += src[j] - first[j];
    }
    const T count = static_cast<T>(n);
    for (std::size_t j = 0; j < fs; ++j) dst[j] = first[j] + dst[j] / count;
  }
  // Shortfall: repeat the last aggregate, like padding a short video.
  for (std::size_t k = segments.size(); k < g; ++k) {
    std::memcpy(batch.activations.data().data() + k * fs,
                batch.activations.data().data() + (segments.size() - 1) * fs, fs * sizeof(T));
  }
  return batch;
}

template <typename T>
Tensor<T> aggregate_backward(const Tensor<T>& grad_agg, const AggregatedBatch<T>& batch, const Shape& frames_shape) {
  if (grad_agg.shape() != batch.activations.shape()) {
    throw ShapeError("aggregate_backward", batch.activations.shape(), grad_agg.shape());
  }
  Tensor<T> grad(frames_shape);
  const std::size_t fs = grad.frame_size();
  const auto segments = batch.assignment.segments();
  const std::size_t real = segments.size();
  const std::size_t g = grad_agg.dim(0);
  // Padded copies feed back into the last real cluster.
  std::vector<T> last(grad_agg.frame(real - 1).begin(), grad_agg.frame(real - 1).end());
  for (std::size_t k = real; k < g; ++k) {
    const auto extra = grad_agg.frame(k);
    for (std::size_t j = 0; j < fs; ++j) last[j] += extra[j];
  }
  for (std::size_t k = 0; k < real; ++k) {
    const auto [begin, end] = segments[k];
    const T count = static_cast<T>(end - begin);
    const T* src = k + 1 == real ? last.data() : grad_agg.frame(k).data();
    for (std::size_t f = begin; f < end; ++f) {
      T* dst = grad.data().data() + f * fs;
      for (std::size_t j = 0; j < fs; ++j) dst[j] = src[j] / count;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void finish_pass(const Backbone<T>& net, VideoPass<T>& pass, const Tensor<T>& rest_input) {
  pass.logits = net.rest.forward(rest_input, &pass.rest_tape);
  pass.loss = cross_entropy(pass.logits, pass.label);
  pass.scores = mean_rows(pass.logits);
}

}  // namespace

template <typename T>
VideoPass<T> forward_full(const Backbone<T>& net, const Tensor<T>& frames, std::size_t label) {
  VideoPass<T> pass;
  pass.label = label;
  const Tensor<T> pre = net.block1.forward(frames, &pass.block1_tape);
  pass.block1_out_shape = pre.shape();
  finish_pass(net, pass, pre);
  return pass;
}

template <typename T>
VideoPass<T> forward_clustered(const Backbone<T>& net, const Tensor<T>& frames, std::size_t label,
                               ClusteringMethod method, std::uint32_t g) {
  if (method == ClusteringMethod::kNone) throw std::invalid_argument("forward_clustered: method 'none'");
  VideoPass<T> pass;
  pass.label = label;
  pass.clustered = true;
  const Tensor<T> pre = net.block1.forward(frames, &pass.block1_tape);
  pass.block1_out_shape = pre.shape();
  ClusterAssignment assignment = method == ClusteringMethod::kUniform
                                     ? uniform_cluster(pre.dim(0), g)
                                     : assign_clusters(method, binarize_frames(pre), g);
  pass.batch = aggregate(pre, assignment, g);
  finish_pass(net, pass, pass.batch.activations);
  return pass;
}

template <typename T>
PipelineGradients<T> backward(const Backbone<T>& net, VideoPass<T>& pass) {
  Tensor<T> dlogits;
  cross_entropy(pass.logits, pass.label, &dlogits);
  BackwardResult<T> rest = net.rest.backward(pass.rest_tape, dlogits);
  Tensor<T> grad_pre = pass.clustered ? aggregate_backward(rest.grad_input, pass.batch, pass.block1_out_shape)
                                      : std::move(rest.grad_input);
  BackwardResult<T> first = net.block1.backward(pass.block1_tape, grad_pre, false);
  PipelineGradients<T> out;
  out.params = std::move(first.param_grads);
  for (auto& g : rest.param_grads) out.params.push_back(std::move(g));
  return out;
}

std::vector<std::size_t> sample_frame_indices(std::size_t n_frames, std::size_t count, std::mt19937_64* rng) {
  if (count == 0 || count > n_frames) {
    throw std::invalid_argument("sample_frame_indices: cannot take " + std::to_string(count) + " of " +
                                std::to_string(n_frames) + " frames");
  }
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t begin = s * n_frames / count;
    const std::size_t end = (s + 1) * n_frames / count;
    if (rng) {
      out.push_back(begin + static_cast<std::size_t>((*rng)() % (end - begin)));
    } else {
      out.push_back(begin + (end - begin) / 2);
    }
  }
  return out;
}

template <typename T>
Tensor<T> select_frames(const Tensor<T>& frames, std::span<const std::size_t> indices) {
  Shape shape = frames.shape();
  shape[0] = indices.size();
  Tensor<T> out(shape);
  const std::size_t fs = frames.frame_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= frames.dim(0)) throw std::out_of_range("select_frames: frame index out of range");
    std::memcpy(out.data().data() + i * fs, frames.frame(indices[i]).data(), fs * sizeof(T));
  }
  return out;
}

template <typename T>
VideoPass<T> forward_video(const Backbone<T>& net, const PipelineConfig& config, const Tensor<T>& frames,
                           std::size_t label, bool training, std::mt19937_64* rng) {
  if (frames.dim(0) != config.frames_per_video) {
    throw ShapeError("forward_video", "(" + std::to_string(config.frames_per_video) + ", C, H, W)", frames.shape());
  }
  if (!training && config.eval_sampled_frames > 0) {
    const auto idx = sample_frame_indices(frames.dim(0), config.eval_sampled_frames, nullptr);
    return forward_full(net, select_frames(frames, idx), label);
  }
  if (config.method == ClusteringMethod::kNone) {
    if (config.sampled_frames == 0) return forward_full(net, frames, label);
    const auto idx = sample_frame_indices(frames.dim(0), config.sampled_frames, training ? rng : nullptr);
    return forward_full(net, select_frames(frames, idx), label);
  }
  return forward_clustered(net, frames, label, config.method, config.g);
}

template <typename T>
Tensor<T> pad_frames(const Tensor<T>& frames, std::size_t target_len) {
  if (frames.rank() == 0 || frames.dim(0) == 0) throw std::invalid_argument("pad_frames: no frames");
  if (target_len < frames.dim(0)) {
    throw std::invalid_argument("pad_frames: target length " + std::to_string(target_len) +
                                " is shorter than the video (" + std::to_string(frames.dim(0)) + ")");
  }
  std::vector<std::size_t> idx(target_len);
  for (std::size_t i = 0; i < target_len; ++i) idx[i] = std::min(i, frames.dim(0) - 1);
  return select_frames(frames, idx);
}

PipelineFlops pipeline_flops(const PipelineConfig& config) {
  config.validate();
  PipelineFlops f;
  f.block1 = count_flops(config.block1, config.frame_shape, config.block1_frames()).total;
  Shape mid{1, config.frame_shape[0], config.frame_shape[1], config.frame_shape[2]};
  for (const auto& s : config.block1) mid = s.output_shape(mid);
  const Shape mid_frame(mid.begin() + 1, mid.end());
  f.rest = count_flops(config.rest, mid_frame, config.positions()).total;
  f.total = f.block1 + f.rest;
  return f;
}

template <typename T>
std::vector<Tensor<T>> block_taps(const Backbone<T>& net, const Tensor<T>& frames) {
  std::vector<Tensor<T>> taps;
  Tensor<T> x = net.block1.forward(frames);
  taps.push_back(x);
  for (std::size_t i = 0; i < net.rest.num_layers(); ++i) {
    x = net.rest.layer(i).forward(x, nullptr, i);
    if (net.rest.layer(i).spec.kind == LayerKind::kConv2d) taps.push_back(x);
  }
  return taps;
}

#define FVAR_INSTANTIATE(T)                                                                                   \
  template struct Backbone<T>;                                                                                \
  template AggregatedBatch<T> aggregate(const Tensor<T>&, const ClusterAssignment&, std::uint32_t);           \
  template Tensor<T> aggregate_backward(const Tensor<T>&, const AggregatedBatch<T>&, const Shape&);           \
  template VideoPass<T> forward_full(const Backbone<T>&, const Tensor<T>&, std::size_t);                      \
  template VideoPass<T> forward_clustered(const Backbone<T>&, const Tensor<T>&, std::size_t,                  \
                                          ClusteringMethod, std::uint32_t);                                   \
  template PipelineGradients<T> backward(const Backbone<T>&, VideoPass<T>&);                                  \
  template Tensor<T> select_frames(const Tensor<T>&, std::span<const std::size_t>);                           \
  template VideoPass<T> forward_video(const Backbone<T>&, const PipelineConfig&, const Tensor<T>&,            \
                                      std::size_t, bool, std::mt19937_64*);                                   \
  template Tensor<T> pad_frames(const Tensor<T>&, std::size_t);                                               \
  template std::vector<Tensor<T>> block_taps(const Backbone<T>&, const Tensor<T>&);

FVAR_INSTANTIATE(float)
FVAR_INSTANTIATE(double)
#undef FVAR_INSTANTIATE

}  // namespace fvar
