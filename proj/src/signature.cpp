#include "fvar/signature.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "fvar/binary_io.h"
#include "fvar/stats.h"

namespace fvar {

Signature::Signature(std::size_t bit_len) : words_(words_for_bits(bit_len), 0), bit_len_(bit_len) {
  if (bit_len == 0) throw std::invalid_argument("signature: bit_len must be positive");
}

Signature Signature::from_words(std::vector<std::uint64_t> words, std::size_t bit_len) {
  Signature s(bit_len);
  if (words.size() != s.words_.size()) {
    throw std::invalid_argument("signature: " + std::to_string(words.size()) + " words for " +
                                std::to_string(bit_len) + " bits");
  }
  const std::size_t tail = bit_len & 63;
  if (tail != 0 && (words.back() >> tail) != 0) {
    throw std::invalid_argument("signature: pad bits past bit_len are set");
  }
  s.words_ = std::move(words);
  return s;
}

void Signature::set(std::size_t i, bool value) {
  if (i >= bit_len_) throw std::out_of_range("signature: bit index out of range");
  const std::uint64_t mask = std::uint64_t{1} << (i & 63);
  if (value) {
    words_[i >> 6] |= mask;
  } else {
    words_[i >> 6] &= ~mask;
  }
}

template <typename T>
Signature binarize(std::span<const T> activation) {
  if (activation.empty()) throw std::invalid_argument("binarize: empty activation map");
  std::vector<std::uint64_t> words(words_for_bits(activation.size()), 0);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::size_t begin = w * 64;
    const std::size_t end = std::min(begin + 64, activation.size());
    std::uint64_t word = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const T v = activation[i];
      if (!std::isfinite(v)) {
        throw std::invalid_argument("binarize: non-finite value at index " + std::to_string(i));
      }
      // Zero maps to 0, like the dead side of ReLU.
      word |= static_cast<std::uint64_t>(v > T{0}) << (i - begin);
    }
    words[w] = word;
  }
  return Signature::from_words(std::move(words), activation.size());
}

template <typename T>
std::vector<Signature> binarize_frames(const Tensor<T>& maps) {
  if (maps.rank() < 2) throw ShapeError("binarize_frames", "(frames, ...)", maps.shape());
  std::vector<Signature> out;
  out.reserve(maps.dim(0));
  for (std::size_t i = 0; i < maps.dim(0); ++i) out.push_back(binarize(maps.frame(i)));
  return out;
}

namespace {
void check_lengths(const Signature& a, const Signature& b) {
  if (a.bit_len() != b.bit_len()) {
    throw std::invalid_argument("hamming: bit_len " + std::to_string(a.bit_len()) + " vs " +
                                std::to_string(b.bit_len()));
  }
}
}  // namespace

std::size_t hamming(const Signature& a, const Signature& b) {
  check_lengths(a, b);
  const auto wa = a.words();
  const auto wb = b.words();
  std::size_t d = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) d += static_cast<std::size_t>(std::popcount(wa[i] ^ wb[i]));
  return d;
}

std::size_t hamming_bitwise(const Signature& a, const Signature& b) {
  check_lengths(a, b);
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.bit_len(); ++i) d += a.bit(i) != b.bit(i);
  return d;
}

std::vector<std::size_t> adjacent_distances(std::span<const Signature> frames) {
  std::vector<std::size_t> d;
  if (frames.size() < 2) return d;
  d.reserve(frames.size() - 1);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) d.push_back(hamming(frames[i], frames[i + 1]));
  return d;
}

std::vector<std::uint8_t> encode_signatures(std::span<const Signature> frames) {
  if (frames.empty()) throw std::invalid_argument("encode_signatures: no frames");
  ByteWriter w;
  w.magic("FVSG");
  w.u64(frames[0].bit_len());
  w.u64(frames.size());
  for (const auto& s : frames) {
    if (s.bit_len() != frames[0].bit_len()) throw std::invalid_argument("encode_signatures: mixed bit lengths");
    for (auto word : s.words()) w.u64(word);
  }
  return w.bytes();
}

std::vector<Signature> decode_signatures(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "signature dump");
  r.expect_magic("FVSG");
  const std::uint64_t bit_len = r.u64();
  const std::uint64_t count = r.u64();
  if (bit_len == 0) r.fail("bit_len is zero");
  const std::size_t words = words_for_bits(bit_len);
  if (count > r.remaining() / 8 / words) {
    r.fail("truncated: " + std::to_string(count) + " frames need " + std::to_string(count * words * 8) +
           " bytes, " + std::to_string(r.remaining()) + " available");
  }
  std::vector<Signature> out;
  out.reserve(count);
  for (std::uint64_t f = 0; f < count; ++f) {
    std::vector<std::uint64_t> ws(words);
    for (auto& w : ws) w = r.u64();
    try {
      out.push_back(Signature::from_words(std::move(ws), bit_len));
    } catch (const std::invalid_argument& e) {
      r.fail(e.what());
    }
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

void write_signatures(const std::string& path, std::span<const Signature> frames) {
  write_file_bytes(path, encode_signatures(frames));
}

std::vector<Signature> read_signatures(const std::string& path) { return decode_signatures(read_file_bytes(path)); }

template <typename T>
BlockConsistency signature_block_consistency(const std::vector<Tensor<T>>& block_maps) {
  if (block_maps.size() < 2) throw std::invalid_argument("signature_block_consistency: need at least two blocks");
  BlockConsistency out;
  const std::size_t frames = block_maps[0].dim(0);
  std::vector<std::vector<double>> as_double;
  for (const auto& maps : block_maps) {
    if (maps.dim(0) != frames) throw ShapeError("signature_block_consistency", "matching frame count", maps.shape());
    const auto sigs = binarize_frames(maps);
    out.adjacent.push_back(adjacent_distances(sigs));
    as_double.emplace_back(out.adjacent.back().begin(), out.adjacent.back().end());
  }
  for (const auto& d : as_double) {
    auto c = spearman(as_double[0], d);
    if (!c) out.degenerate = true;
    out.spearman.push_back(c);
  }
  return out;
}

template Signature binarize(std::span<const float>);
template Signature binarize(std::span<const double>);
template std::vector<Signature> binarize_frames(const Tensor<float>&);
template std::vector<Signature> binarize_frames(const Tensor<double>&);
template BlockConsistency signature_block_consistency(const std::vector<Tensor<float>>&);
template BlockConsistency signature_block_consistency(const std::vector<Tensor<double>>&);

}  // namespace fvar
