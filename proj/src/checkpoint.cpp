#include "fvar/checkpoint.h"

namespace fvar {

std::vector<std::uint8_t> encode_checkpoint(const std::vector<const Sequential<float>*>& nets) {
  ByteWriter w;
  w.magic("FVCK");
  w.u32(kCheckpointVersion);
  const std::size_t body_start = w.size();
  std::uint32_t layers = 0;
  for (const auto* n : nets) layers += static_cast<std::uint32_t>(n->num_layers());
  w.u32(layers);
  for (const auto* net : nets) {
    for (std::size_t l = 0; l < net->num_layers(); ++l) {
      const auto& layer = net->layer(l);
      w.u8(static_cast<std::uint8_t>(layer.spec.kind));
      w.u32(static_cast<std::uint32_t>(layer.params.size()));
      for (const auto& t : layer.params) {
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.f32(v);
      }
    }
  }
  const auto& bytes = w.bytes();
  const std::uint32_t crc = crc32(std::span(bytes).subspan(body_start));
  w.u32(crc);
  return w.bytes();
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, const std::vector<Sequential<float>*>& nets) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("FVCK");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 12) r.fail("file too short for a checksum");
  const std::size_t body_start = r.offset();
  const auto body = bytes.subspan(body_start, bytes.size() - body_start - 4);
  ByteReader tail(bytes.subspan(bytes.size() - 4), "checkpoint trailer");
  const std::uint32_t stored = tail.u32();
  if (crc32(body) != stored) {
    throw FormatError("checkpoint: checksum mismatch over bytes [" + std::to_string(body_start) + ", " +
                      std::to_string(bytes.size() - 4) + ")");
  }

  ByteReader b(body, "checkpoint body");
  std::size_t expected_layers = 0;
  for (const auto* n : nets) expected_layers += n->num_layers();
  const std::uint32_t layers = b.u32();
  if (layers != expected_layers) {
    b.fail("layer count " + std::to_string(layers) + " does not match architecture (" +
           std::to_string(expected_layers) + ")");
  }
  // Decode into scratch copies first so a bad file leaves the targets intact.
  std::vector<Sequential<float>> scratch;
  for (const auto* n : nets) scratch.push_back(*n);
  for (auto& net : scratch) {
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      auto& layer = net.layer(l);
      const auto kind = static_cast<LayerKind>(b.u8());
      if (kind != layer.spec.kind) {
        b.fail("layer kind tag " + std::to_string(static_cast<int>(kind)) + " where architecture has " +
               std::string(to_string(layer.spec.kind)));
      }
      const std::uint32_t count = b.u32();
      if (count != layer.params.size()) b.fail("parameter tensor count mismatch");
      for (auto& t : layer.params) {
        const std::uint32_t rank = b.u32();
        Shape shape(rank);
        for (auto& d : shape) d = b.u32();
        if (shape != t.shape()) b.fail("tensor shape " + shape_string(shape) + " where architecture has " + shape_string(t.shape()));
        for (auto& v : t.data()) v = b.f32();
      }
    }
  }
  if (b.remaining() != 0) b.fail(std::to_string(b.remaining()) + " trailing bytes");
  for (std::size_t i = 0; i < nets.size(); ++i) *nets[i] = std::move(scratch[i]);
}

void save_checkpoint(const std::string& path, const std::vector<const Sequential<float>*>& nets) {
  write_file_bytes(path, encode_checkpoint(nets));
}

void load_checkpoint(const std::string& path, const std::vector<Sequential<float>*>& nets) {
  const auto bytes = read_file_bytes(path);
  decode_checkpoint(bytes, nets);
}

}  // namespace fvar
