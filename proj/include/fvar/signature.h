#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fvar/tensor.h"

namespace fvar {

// Bit-packed sign vector of one activation map: bit i is set iff value i is
// strictly positive. Stored in 64-bit words, least significant bit first;
// pad bits past bit_len are always zero.
class Signature {
 public:
  explicit Signature(std::size_t bit_len);
  // Rejects a word count that does not fit bit_len and any set pad bit.
  static Signature from_words(std::vector<std::uint64_t> words, std::size_t bit_len);

  std::size_t bit_len() const { return bit_len_; }
  std::span<const std::uint64_t> words() const { return words_; }
  bool bit(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(std::size_t i, bool value);

  bool operator==(const Signature&) const = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t bit_len_ = 0;
};

inline std::size_t words_for_bits(std::size_t bits) { return (bits + 63) / 64; }

// Throws std::invalid_argument on an empty map or a non-finite value.
template <typename T>
Signature binarize(std::span<const T> activation);

// One signature per leading-axis slice of `maps`.
template <typename T>
std::vector<Signature> binarize_frames(const Tensor<T>& maps);

// XOR + popcount over packed words. Throws on bit_len mismatch.
std::size_t hamming(const Signature& a, const Signature& b);
// Bit-at-a-time reference; used by the benchmark's exactness check.
std::size_t hamming_bitwise(const Signature& a, const Signature& b);

// Adjacent-frame distances H(s_i, s_{i+1}), i = 0..n-2.
std::vector<std::size_t> adjacent_distances(std::span<const Signature> frames);

// "FVSG" | bit_len u64 | frame count u64 | packed words u64 per frame, all
// little-endian.
std::vector<std::uint8_t> encode_signatures(std::span<const Signature> frames);
std::vector<Signature> decode_signatures(std::span<const std::uint8_t> bytes);
void write_signatures(const std::string& path, std::span<const Signature> frames);
std::vector<Signature> read_signatures(const std::string& path);

struct BlockConsistency {
  // adjacent[b][i] = H between frames i and i+1 at block b.
  std::vector<std::vector<std::size_t>> adjacent;
  // spearman[b] = rank correlation of block 0 and block b adjacent distances
  // (entry 0 is the trivial self-correlation). Empty when undefined.
  std::vector<std::optional<double>> spearman;
  // True when any block's distances are constant, so some correlation is
  // undefined.
  bool degenerate = false;
};

// `block_maps[b]` holds the per-frame activations tapped at block b, shape
// (frames, ...). Requires at least two blocks with equal frame counts.
template <typename T>
BlockConsistency signature_block_consistency(const std::vector<Tensor<T>>& block_maps);

}  // namespace fvar
