#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fvar/tensor.h"

namespace fvar {

enum class Motion : std::uint8_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
inline constexpr std::size_t kMotionClasses = 4;
std::string_view to_string(Motion m);

// Digits 0-4 carry the labelled motion; 5-9 only appear in distractor chunks.
inline constexpr std::uint8_t kFirstForeignDigit = 5;

struct VideoDims {
  std::size_t frames = 32;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t frame_bytes() const { return channels * height * width; }
  std::size_t video_bytes() const { return frames * frame_bytes(); }
  bool operator==(const VideoDims&) const = default;
};

struct VideoSample {
  // frames x channels x height x width, channel planes per frame.
  std::vector<std::uint8_t> pixels;
  std::uint8_t label = 0;
  // relevance[i] is true iff frame i shows the target digit's motion.
  std::vector<bool> relevance;

  bool operator==(const VideoSample&) const = default;
};

struct VideoCollection {
  VideoDims dims;
  std::vector<VideoSample> videos;

  std::span<const std::uint8_t> frame(std::size_t video, std::size_t index) const {
    return std::span(videos[video].pixels).subspan(index * dims.frame_bytes(), dims.frame_bytes());
  }
  bool operator==(const VideoCollection&) const = default;
};

enum class DistractorKind : std::uint8_t { kBackground = 0, kBlack = 1, kForeignDigit = 2 };

struct DistractorConfig {
  double probability = 1.0 / 3.0;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
};

struct DatasetSpec {
  std::size_t train_count = 1800;
  std::size_t test_count = 600;
  VideoDims dims;
  // Indexed by DistractorKind. At most one chunk per video; the chunk is
  // present with probability equal to the sum of the three probabilities.
  std::array<DistractorConfig, 3> distractors{};
  std::size_t glyph_size = 14;
  // Pixels moved per relevant frame along the labelled axis (wraps around).
  std::size_t velocity = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  VideoCollection train;
  VideoCollection test;
};

// Grayscale digit glyphs grouped by digit class.
struct GlyphBank {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::array<std::vector<std::vector<std::uint8_t>>, 10> by_digit;
  bool procedural = false;

  std::size_t size() const;
};

// Ten hand-built stroke digits on a 28x28 canvas.
GlyphBank procedural_glyphs();

// Reads an MNIST-style IDX pair (images magic 0x00000803, labels 0x00000801,
// big-endian dimensions). Falls back to procedural_glyphs() when either file
// is missing; malformed files raise FormatError naming the byte offset.
GlyphBank load_idx_digits(const std::string& images_path, const std::string& labels_path);

Dataset generate(const DatasetSpec& spec, const GlyphBank& glyphs);
// One video; deterministic in (seed, split, index).
VideoSample generate_video(const DatasetSpec& spec, const GlyphBank& glyphs, std::uint32_t split, std::size_t index);

inline constexpr std::uint32_t kDatasetVersion = 1;

// "FVDS" | version u32 | video count u32, frames u32, channels u32, height
// u32, width u32 | per video: label u8, relevance bitmask (frames bits, LSB
// first, padded to bytes), pixels | CRC32 u32 of every byte after the
// version field. Little-endian.
std::vector<std::uint8_t> encode_collection(const VideoCollection& collection);
VideoCollection decode_collection(std::span<const std::uint8_t> bytes);
void write_collection(const std::string& path, const VideoCollection& collection);
VideoCollection read_collection(const std::string& path);

// Pixels scaled to [-1, 1], shape (frames, channels, height, width).
template <typename T>
Tensor<T> video_tensor(const VideoCollection& collection, std::size_t index);

}  // namespace fvar
