#include "fvar/flops.h"

namespace fvar {

FlopReport count_flops(std::span<const LayerSpec> layers, const Shape& frame_shape, std::size_t frames) {
  FlopReport report;
  Shape shape{1};
  shape.insert(shape.end(), frame_shape.begin(), frame_shape.end());
  for (const auto& spec : layers) {
    const Shape out = spec.output_shape(shape);
    std::uint64_t per_frame = 0;
    if (spec.kind == LayerKind::kConv2d) {
      per_frame = static_cast<std::uint64_t>(out[1]) * out[2] * out[3] * spec.in_channels * spec.kernel * spec.kernel;
    } else if (spec.kind == LayerKind::kLinear) {
      per_frame = static_cast<std::uint64_t>(spec.in_channels) * spec.out_channels;
    }
    const std::uint64_t macs = per_frame * frames;
    report.layers.push_back({spec.kind, macs});
    report.total += macs;
    shape = out;
  }
  return report;
}

}  // namespace fvar
