#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fvar/binary_io.h"
#include "fvar/layers.h"

namespace fvar {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "FVCK" | version u32 | layer count u32 | per layer: kind u8, tensor count
// u32, per tensor: rank u32, dims u32..., float32 values | CRC32 u32 over
// every byte between the version field and the checksum. Little-endian.
//
// The networks are serialized back to back as one layer list.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<const Sequential<float>*>& nets);

// Decodes into networks whose architecture is already known. Kind tags and
// every tensor shape must match, otherwise FormatError.
void decode_checkpoint(std::span<const std::uint8_t> bytes, const std::vector<Sequential<float>*>& nets);

void save_checkpoint(const std::string& path, const std::vector<const Sequential<float>*>& nets);
void load_checkpoint(const std::string& path, const std::vector<Sequential<float>*>& nets);

}  // namespace fvar
