#include "fvar/layers.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fvar {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kGlobalAvgPool: return "global-avg-pool";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kTemporalShift: return "temporal-shift";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::kConv2d, LayerKind::kRelu, LayerKind::kMaxPool2d,
                 LayerKind::kGlobalAvgPool, LayerKind::kLinear, LayerKind::kTemporalShift}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = kernel / 2;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool2d(std::size_t kernel) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool2d;
  s.kernel = kernel;
  s.stride = kernel;
  return s;
}

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec s;
  s.kind = LayerKind::kGlobalAvgPool;
  return s;
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

LayerSpec LayerSpec::temporal_shift(double fraction) {
  LayerSpec s;
  s.kind = LayerKind::kTemporalShift;
  s.shift_fraction = fraction;
  return s;
}

void LayerSpec::validate() const {
  auto fail = [this](const std::string& why) {
    throw std::invalid_argument(std::string(to_string(kind)) + ": " + why);
  };
  switch (kind) {
    case LayerKind::kConv2d:
      if (in_channels == 0 || out_channels == 0) fail("channel counts must be positive");
      if (kernel == 0 || stride == 0) fail("kernel and stride must be positive");
      if (padding >= kernel) fail("padding must be smaller than the kernel");
      break;
    case LayerKind::kMaxPool2d:
      if (kernel == 0 || stride == 0) fail("kernel and stride must be positive");
      break;
    case LayerKind::kLinear:
      if (in_channels == 0 || out_channels == 0) fail("feature counts must be positive");
      break;
    case LayerKind::kTemporalShift:
      if (!(shift_fraction >= 0.0 && shift_fraction <= 0.5)) fail("shift fraction must lie in [0, 0.5]");
      break;
    case LayerKind::kRelu:
    case LayerKind::kGlobalAvgPool:
      break;
    default:
      fail("unknown kind");
  }
}

std::vector<Shape> LayerSpec::parameter_shapes() const {
  switch (kind) {
    case LayerKind::kConv2d:
      return {{out_channels, in_channels, kernel, kernel}, {out_channels}};
    case LayerKind::kLinear:
      return {{out_channels, in_channels}, {out_channels}};
    default:
      return {};
  }
}

namespace {

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t shifted_channels(std::size_t channels, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(channels) * fraction + 1e-9));
}

}  // namespace

Shape LayerSpec::output_shape(const Shape& in) const {
  const std::string where(to_string(kind));
  switch (kind) {
    case LayerKind::kConv2d: {
      if (in.size() != 4 || in[1] != in_channels || in[2] + 2 * padding < kernel ||
          in[3] + 2 * padding < kernel) {
        throw ShapeError(where, "(N, " + std::to_string(in_channels) + ", H>=" +
                                    std::to_string(kernel - 2 * std::min(padding, kernel / 2)) + ", W)",
                         in);
      }
      return {in[0], out_channels, conv_out(in[2], kernel, stride, padding),
              conv_out(in[3], kernel, stride, padding)};
    }
    case LayerKind::kMaxPool2d:
      if (in.size() != 4 || in[2] < kernel || in[3] < kernel) {
        throw ShapeError(where, "(N, C, H>=" + std::to_string(kernel) + ", W>=" + std::to_string(kernel) + ")", in);
      }
      return {in[0], in[1], conv_out(in[2], kernel, stride, 0), conv_out(in[3], kernel, stride, 0)};
    case LayerKind::kGlobalAvgPool:
      if (in.size() != 4) throw ShapeError(where, "(N, C, H, W)", in);
      return {in[0], in[1]};
    case LayerKind::kLinear:
      if (in.size() != 2 || in[1] != in_channels) {
        throw ShapeError(where, "(N, " + std::to_string(in_channels) + ")", in);
      }
      return {in[0], out_channels};
    case LayerKind::kTemporalShift:
      if (in.size() != 4) throw ShapeError(where, "(N, C, H, W)", in);
      return in;
    case LayerKind::kRelu:
      if (in.empty()) throw ShapeError(where, "rank >= 1", in);
      return in;
  }
  throw std::invalid_argument("unknown layer kind");
}

// ---------------------------------------------------------------------------

template <typename T>
void Tape<T>::record(TapeEntry<T> entry) {
  if (consumed_) throw std::logic_error("tape already consumed by backward");
  entries_.push_back(std::move(entry));
}

template <typename T>
void Tape<T>::clear() {
  entries_.clear();
  consumed_ = false;
}

template <typename T>
std::size_t Tape<T>::stored_frames() const {
  std::size_t m = 0;
  for (const auto& e : entries_) {
    if (!e.input_shape.empty()) m = std::max(m, e.input_shape[0]);
  }
  return m;
}

template <typename T>
std::size_t Tape<T>::stored_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.saved.size() + e.indices.size();
  return n;
}

// ---------------------------------------------------------------------------

namespace {

// Fixed-order blocked dot product; the lane split lets the compiler keep
// independent accumulators in vector registers.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T lanes[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[j + l] * b[j + l];
  }
  T tail = 0;
  for (; j < n; ++j) tail += a[j] * b[j];
  for (std::size_t l = 0; l < kLanes; ++l) tail += lanes[l];
  return tail;
}

struct ConvGeometry {
  std::size_t cin, cout, ih, iw, oh, ow, k, stride, pad;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return oh * ow; }
};

// Unfolds one frame into a (cin*k*k, oh*ow) matrix; out-of-image taps are 0.
template <typename T>
void im2col(const ConvGeometry& g, const T* src, T* col) {
  for (std::size_t ic = 0; ic < g.cin; ++ic) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        T* row = col + ((ic * g.k + kh) * g.k + kw) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long long iy = static_cast<long long>(oy * g.stride + kh) - static_cast<long long>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long long>(g.ih)) {
            std::fill(dst, dst + g.ow, T{0});
            continue;
          }
          const T* line = src + (ic * g.ih + static_cast<std::size_t>(iy)) * g.iw;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long long ix = static_cast<long long>(ox * g.stride + kw) - static_cast<long long>(g.pad);
            dst[ox] = ix < 0 || ix >= static_cast<long long>(g.iw) ? T{0} : line[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the frame.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dst) {
  for (std::size_t ic = 0; ic < g.cin; ++ic) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const T* row = col + ((ic * g.k + kh) * g.k + kw) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long long iy = static_cast<long long>(oy * g.stride + kh) - static_cast<long long>(g.pad);
          if (iy < 0 || iy >= static_cast<long long>(g.ih)) continue;
          T* line = dst + (ic * g.ih + static_cast<std::size_t>(iy)) * g.iw;
          const T* srow = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long long ix = static_cast<long long>(ox * g.stride + kw) - static_cast<long long>(g.pad);
            if (ix >= 0 && ix < static_cast<long long>(g.iw)) line[ix] += srow[ox];
          }
        }
      }
    }
  }
}

ConvGeometry conv_geometry(const LayerSpec& s, const Shape& in, const Shape& out) {
  return {s.in_channels, s.out_channels, in[2], in[3], out[2], out[3], s.kernel, s.stride, s.padding};
}

template <typename T>
Tensor<T> conv_forward(const LayerSpec& s, const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  const Shape out_shape = s.output_shape(in.shape());
  Tensor<T> out(out_shape);
  const ConvGeometry g = conv_geometry(s, in.shape(), out_shape);
  const std::size_t rows = g.rows(), cols = g.cols();
  std::vector<T> col(rows * cols);
  const T* wp = w.data().data();
  for (std::size_t n = 0; n < in.dim(0); ++n) {
    im2col(g, in.data().data() + n * g.cin * g.ih * g.iw, col.data());
    T* dst = out.data().data() + n * g.cout * cols;
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      T* plane = dst + oc * cols;
      std::fill(plane, plane + cols, b[oc]);
      for (std::size_t r = 0; r < rows; ++r) {
        const T wv = wp[oc * rows + r];
        const T* c = col.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) plane[j] += wv * c[j];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv_backward(const LayerSpec& s, const Tensor<T>& in, const Tensor<T>& w,
                        const Tensor<T>& gout, Tensor<T>& gw, Tensor<T>& gb, bool input_grad) {
  Tensor<T> gin = input_grad ? Tensor<T>(in.shape()) : Tensor<T>();
  const ConvGeometry g = conv_geometry(s, in.shape(), gout.shape());
  const std::size_t rows = g.rows(), cols = g.cols();
  std::vector<T> col(rows * cols), gcol(input_grad ? rows * cols : 0);
  const T* wp = w.data().data();
  T* gwp = gw.data().data();
  for (std::size_t n = 0; n < in.dim(0); ++n) {
    im2col(g, in.data().data() + n * g.cin * g.ih * g.iw, col.data());
    const T* go = gout.data().data() + n * g.cout * cols;
    if (input_grad) std::fill(gcol.begin(), gcol.end(), T{0});
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      const T* gplane = go + oc * cols;
      T bias_acc = 0;
      for (std::size_t j = 0; j < cols; ++j) bias_acc += gplane[j];
      gb[oc] += bias_acc;
      for (std::size_t r = 0; r < rows; ++r) {
        gwp[oc * rows + r] += dot(gplane, col.data() + r * cols, cols);
        if (!input_grad) continue;
        const T wv = wp[oc * rows + r];
        T* gc = gcol.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gc[j] += wv * gplane[j];
      }
    }
    if (input_grad) col2im(g, gcol.data(), gin.data().data() + n * g.cin * g.ih * g.iw);
  }
  return gin;
}

template <typename T>
Tensor<T> maxpool_forward(const LayerSpec& s, const Tensor<T>& in, std::vector<std::uint32_t>* argmax) {
  const Shape out_shape = s.output_shape(in.shape());
  Tensor<T> out(out_shape);
  const std::size_t planes = in.dim(0) * in.dim(1), ih = in.dim(2), iw = in.dim(3);
  const std::size_t oh = out_shape[2], ow = out_shape[3];
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* ip = in.data().data() + p * ih * iw;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * s.stride) * iw + ox * s.stride;
        T bv = ip[best];
        for (std::size_t ky = 0; ky < s.kernel; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel; ++kx) {
            const std::size_t idx = (oy * s.stride + ky) * iw + ox * s.stride + kx;
            // Strict comparison: ties keep the first maximal element.
            if (ip[idx] > bv) {
              bv = ip[idx];
              best = idx;
            }
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = bv;
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(p * ih * iw + best);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> shift_apply(const Tensor<T>& in, std::size_t fold, bool adjoint) {
  const std::size_t frames = in.dim(0), channels = in.dim(1), hw = in.dim(2) * in.dim(3);
  Tensor<T> out(in.shape());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      // Forward: channels [0, fold) take the previous frame, [fold, 2 fold)
      // take the next one. The adjoint routes gradients the opposite way.
      long long src_t = static_cast<long long>(t);
      if (c < fold) src_t += adjoint ? 1 : -1;
      else if (c < 2 * fold) src_t += adjoint ? -1 : 1;
      if (src_t < 0 || src_t >= static_cast<long long>(frames)) continue;
      const T* sp = in.data().data() + (static_cast<std::size_t>(src_t) * channels + c) * hw;
      std::copy(sp, sp + hw, out.data().data() + (t * channels + c) * hw);
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> Layer<T>::forward(const Tensor<T>& input, Tape<T>* tape, std::size_t index) const {
  const Shape out_shape = spec.output_shape(input.shape());
  TapeEntry<T> entry;
  entry.layer = index;
  entry.input_shape = input.shape();
  Tensor<T> out;
  switch (spec.kind) {
    case LayerKind::kConv2d:
      out = conv_forward(spec, input, params[0], params[1]);
      if (tape) entry.saved = input;
      break;
    case LayerKind::kRelu: {
      out = Tensor<T>(input.shape());
      auto src = input.data();
      auto dst = out.data();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
      if (tape) entry.saved = input;
      break;
    }
    case LayerKind::kMaxPool2d:
      out = maxpool_forward(spec, input, tape ? &entry.indices : nullptr);
      break;
    case LayerKind::kGlobalAvgPool: {
      out = Tensor<T>(out_shape);
      const std::size_t planes = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
      const T scale = T{1} / static_cast<T>(hw);
      for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        const T* ip = input.data().data() + p * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += ip[i];
        out[p] = acc * scale;
      }
      break;
    }
    case LayerKind::kLinear: {
      out = Tensor<T>(out_shape);
      const std::size_t n = input.dim(0), fin = spec.in_channels, fout = spec.out_channels;
      const T* w = params[0].data().data();
      for (std::size_t r = 0; r < n; ++r) {
        const T* x = input.data().data() + r * fin;
        for (std::size_t o = 0; o < fout; ++o) {
          T acc = params[1][o];
          for (std::size_t i = 0; i < fin; ++i) acc += w[o * fin + i] * x[i];
          out[r * fout + o] = acc;
        }
      }
      if (tape) entry.saved = input;
      break;
    }
    case LayerKind::kTemporalShift:
      out = shift_apply(input, shifted_channels(input.dim(1), spec.shift_fraction), false);
      break;
  }
  if (tape) tape->record(std::move(entry));
  return out;
}

template <typename T>
Tensor<T> Layer<T>::backward(const TapeEntry<T>& entry, const Tensor<T>& grad_output,
                             std::span<Tensor<T>> param_grads, bool input_grad) const {
  const Shape expected_out = spec.output_shape(entry.input_shape);
  if (grad_output.shape() != expected_out) {
    throw ShapeError(std::string(to_string(spec.kind)) + " backward", expected_out, grad_output.shape());
  }
  switch (spec.kind) {
    case LayerKind::kConv2d:
      return conv_backward(spec, entry.saved, params[0], grad_output, param_grads[0], param_grads[1], input_grad);
    case LayerKind::kRelu: {
      Tensor<T> gin(entry.input_shape);
      auto x = entry.saved.data();
      auto g = grad_output.data();
      auto d = gin.data();
      // Subgradient at exactly zero is zero.
      for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] > T{0} ? g[i] : T{0};
      return gin;
    }
    case LayerKind::kMaxPool2d: {
      Tensor<T> gin(entry.input_shape);
      for (std::size_t o = 0; o < entry.indices.size(); ++o) gin[entry.indices[o]] += grad_output[o];
      return gin;
    }
    case LayerKind::kGlobalAvgPool: {
      Tensor<T> gin(entry.input_shape);
      const std::size_t hw = entry.input_shape[2] * entry.input_shape[3];
      const T scale = T{1} / static_cast<T>(hw);
      for (std::size_t p = 0; p < grad_output.size(); ++p) {
        const T v = grad_output[p] * scale;
        std::fill(gin.data().data() + p * hw, gin.data().data() + (p + 1) * hw, v);
      }
      return gin;
    }
    case LayerKind::kLinear: {
      const std::size_t n = entry.input_shape[0], fin = spec.in_channels, fout = spec.out_channels;
      Tensor<T> gin(entry.input_shape);
      const T* w = params[0].data().data();
      T* gw = param_grads[0].data().data();
      for (std::size_t r = 0; r < n; ++r) {
        const T* x = entry.saved.data().data() + r * fin;
        T* gx = gin.data().data() + r * fin;
        for (std::size_t o = 0; o < fout; ++o) {
          const T g = grad_output[r * fout + o];
          param_grads[1][o] += g;
          for (std::size_t i = 0; i < fin; ++i) {
            gw[o * fin + i] += g * x[i];
            gx[i] += g * w[o * fin + i];
          }
        }
      }
      return gin;
    }
    case LayerKind::kTemporalShift:
      return shift_apply(grad_output, shifted_channels(entry.input_shape[1], spec.shift_fraction), true);
  }
  throw std::logic_error("unknown layer kind");
}

// ---------------------------------------------------------------------------

template <typename T>
Sequential<T>::Sequential(std::vector<LayerSpec> specs) {
  layers_.reserve(specs.size());
  for (auto& s : specs) {
    s.validate();
    Layer<T> layer;
    layer.spec = s;
    for (const auto& shape : s.parameter_shapes()) layer.params.emplace_back(shape);
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
std::vector<LayerSpec> Sequential<T>::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(l.spec);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Sequential<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    for (auto& p : l.params) out.push_back(&p);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Sequential<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) out.push_back(&p);
  }
  return out;
}

template <typename T>
std::size_t Sequential<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
Shape Sequential<T>::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& l : layers_) s = l.spec.output_shape(s);
  return s;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& input, Tape<T>* tape) const {
  if (tape && tape->consumed()) throw std::logic_error("tape already consumed by backward");
  Tensor<T> x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) x = layers_[i].forward(x, tape, i);
  return x;
}

template <typename T>
BackwardResult<T> Sequential<T>::backward(Tape<T>& tape, const Tensor<T>& grad_output, bool input_grad) const {
  if (tape.consumed()) throw std::logic_error("tape already consumed by backward");
  if (tape.entries_.size() != layers_.size()) {
    throw std::logic_error("tape holds " + std::to_string(tape.entries_.size()) + " entries for a " +
                           std::to_string(layers_.size()) + "-layer network");
  }
  BackwardResult<T> result;
  result.param_grads = zero_like_parameters(*this);
  // Offsets of each layer's first parameter inside the flat gradient list.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) offset[i + 1] = offset[i] + layers_[i].params.size();

  Tensor<T> g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    TapeEntry<T>& entry = tape.entries_[i];
    if (entry.layer != i) throw std::logic_error("tape entry order does not match the network");
    std::span<Tensor<T>> grads(result.param_grads.data() + offset[i], layers_[i].params.size());
    g = layers_[i].backward(entry, g, grads, input_grad || i > 0);
    // Release the intermediate as soon as it has been used.
    entry.saved = Tensor<T>();
    entry.indices.clear();
  }
  tape.consumed_ = true;
  result.grad_input = std::move(g);
  return result;
}

template <typename T>
void Sequential<T>::initialize(std::mt19937_64& rng) {
  for (auto& l : layers_) {
    if (l.params.empty()) continue;
    const std::size_t fan_in = l.spec.kind == LayerKind::kConv2d
                                   ? l.spec.in_channels * l.spec.kernel * l.spec.kernel
                                   : l.spec.in_channels;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : l.params[0].data()) v = static_cast<T>(dist(rng));
    l.params[1].fill(T{0});
  }
}

template <typename T>
std::vector<Tensor<T>> zero_like_parameters(const Sequential<T>& net) {
  std::vector<Tensor<T>> out;
  for (const auto* p : net.parameters()) out.emplace_back(p->shape());
  return out;
}

template class Tape<float>;
template class Tape<double>;
template struct Layer<float>;
template struct Layer<double>;
template class Sequential<float>;
template class Sequential<double>;
template std::vector<Tensor<float>> zero_like_parameters(const Sequential<float>&);
template std::vector<Tensor<double>> zero_like_parameters(const Sequential<double>&);

}  // namespace fvar
