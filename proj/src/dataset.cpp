#include "fvar/dataset.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "fvar/binary_io.h"

namespace fvar {

std::string_view to_string(Motion m) {
  switch (m) {
    case Motion::kUp: return "move-up";
    case Motion::kDown: return "move-down";
    case Motion::kLeft: return "move-left";
    case Motion::kRight: return "move-right";
  }
  return "unknown";
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("dataset spec: " + why); };
  if (train_count == 0 || test_count == 0) fail("split counts must be positive");
  if (dims.frames == 0 || dims.channels == 0 || dims.height == 0 || dims.width == 0) fail("dimensions must be positive");
  double total = 0.0;
  for (const auto& d : distractors) {
    if (!(d.probability >= 0.0 && d.probability <= 1.0)) fail("distractor probabilities must lie in [0, 1]");
    total += d.probability;
    if (d.probability > 0.0) {
      if (d.min_length == 0 || d.min_length > d.max_length) fail("distractor length range is empty");
      if (d.max_length >= dims.frames) {
        fail("distractor chunk of up to " + std::to_string(d.max_length) + " frames leaves no relevant frame in " +
             std::to_string(dims.frames));
      }
    }
  }
  if (total > 1.0 + 1e-12) fail("distractor probabilities sum above 1");
  if (glyph_size == 0 || glyph_size > dims.height || glyph_size > dims.width) fail("glyph does not fit the frame");
}

std::size_t GlyphBank::size() const {
  std::size_t n = 0;
  for (const auto& v : by_digit) n += v.size();
  return n;
}

// ---------------------------------------------------------------------------

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

// Seven-segment layout inside the 28x28 canvas.
const std::array<Segment, 7> kSegments = {{
    {9, 5, 19, 5},    // a: top
    {19, 5, 19, 14},  // b: upper right
    {19, 14, 19, 23}, // c: lower right
    {9, 23, 19, 23},  // d: bottom
    {9, 14, 9, 23},   // e: lower left
    {9, 5, 9, 14},    // f: upper left
    {9, 14, 19, 14},  // g: middle
}};

const std::array<const char*, 10> kDigitSegments = {"abcdef", "bc",      "abged", "abgcd", "fgbc",
                                                    "afgcd",  "afgedc", "abc",   "abcdefg", "abfgcd"};

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

std::uint32_t be32(ByteReader& r) {
  const auto b = r.raw(4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace

GlyphBank procedural_glyphs() {
  GlyphBank bank;
  bank.rows = bank.cols = 28;
  bank.procedural = true;
  constexpr double kHalfWidth = 1.6;
  for (int digit = 0; digit < 10; ++digit) {
    std::vector<std::uint8_t> glyph(28 * 28, 0);
    for (int y = 0; y < 28; ++y) {
      for (int x = 0; x < 28; ++x) {
        double best = 1e9;
        for (const char* c = kDigitSegments[digit]; *c; ++c) {
          best = std::min(best, segment_distance(x + 0.5, y + 0.5, kSegments[*c - 'a']));
        }
        // One pixel of anti-aliased falloff around the stroke.
        const double v = std::clamp(kHalfWidth + 0.5 - best, 0.0, 1.0);
        glyph[y * 28 + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
    bank.by_digit[digit].push_back(std::move(glyph));
  }
  return bank;
}

GlyphBank load_idx_digits(const std::string& images_path, const std::string& labels_path) {
  if (!std::filesystem::exists(images_path) || !std::filesystem::exists(labels_path)) return procedural_glyphs();
  const auto image_bytes = read_file_bytes(images_path);
  const auto label_bytes = read_file_bytes(labels_path);

  ByteReader ir(image_bytes, "IDX images " + images_path);
  const std::uint32_t imagic = be32(ir);
  if (imagic != 0x00000803u) ir.fail("bad magic, expected 0x00000803");
  const std::uint32_t count = be32(ir), rows = be32(ir), cols = be32(ir);
  const std::size_t need = static_cast<std::size_t>(count) * rows * cols;
  if (ir.remaining() < need) {
    ir.fail("truncated: expected " + std::to_string(need) + " pixel bytes, " + std::to_string(ir.remaining()) +
            " available");
  }

  ByteReader lr(label_bytes, "IDX labels " + labels_path);
  const std::uint32_t lmagic = be32(lr);
  if (lmagic != 0x00000801u) lr.fail("bad magic, expected 0x00000801");
  const std::uint32_t lcount = be32(lr);
  if (lcount != count) lr.fail("label count " + std::to_string(lcount) + " does not match image count " + std::to_string(count));
  if (lr.remaining() < count) {
    lr.fail("truncated: expected " + std::to_string(count) + " label bytes, " + std::to_string(lr.remaining()) +
            " available");
  }

  GlyphBank bank;
  bank.rows = rows;
  bank.cols = cols;
  const auto pixels = ir.raw(need);
  const auto labels = lr.raw(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (labels[i] > 9) lr.fail("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " is not a digit");
    const auto* p = pixels.data() + static_cast<std::size_t>(i) * rows * cols;
    bank.by_digit[labels[i]].emplace_back(p, p + static_cast<std::size_t>(rows) * cols);
  }
  return bank;
}

// ---------------------------------------------------------------------------

namespace {

using Rng = std::mt19937_64;

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi_inclusive) {
  return std::uniform_int_distribution<std::size_t>(lo, hi_inclusive)(rng);
}

// Area-average resample of a glyph to size x size.
std::vector<float> resample_glyph(const std::vector<std::uint8_t>& glyph, std::size_t rows, std::size_t cols,
                                  std::size_t size) {
  std::vector<float> out(size * size, 0.0f);
  for (std::size_t y = 0; y < size; ++y) {
    const std::size_t y0 = y * rows / size, y1 = std::max(y0 + 1, (y + 1) * rows / size);
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t x0 = x * cols / size, x1 = std::max(x0 + 1, (x + 1) * cols / size);
      float acc = 0.0f;
      for (std::size_t sy = y0; sy < y1; ++sy) {
        for (std::size_t sx = x0; sx < x1; ++sx) acc += glyph[sy * cols + sx];
      }
      out[y * size + x] = acc / static_cast<float>((y1 - y0) * (x1 - x0)) / 255.0f;
    }
  }
  return out;
}

// Smooth value-noise texture, values kept in [30, 200] so that full-intensity
// digit strokes stay brighter than any background pixel.
std::vector<std::uint8_t> value_noise_background(const VideoDims& dims, Rng& rng) {
  constexpr std::size_t kGrid = 5;
  std::vector<std::uint8_t> out(dims.frame_bytes());
  std::uniform_real_distribution<double> level(30.0, 200.0);
  for (std::size_t c = 0; c < dims.channels; ++c) {
    std::array<double, kGrid * kGrid> lattice{};
    for (auto& v : lattice) v = level(rng);
    for (std::size_t y = 0; y < dims.height; ++y) {
      const double gy = static_cast<double>(y) * (kGrid - 1) / std::max<std::size_t>(1, dims.height - 1);
      const std::size_t iy = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
      const double fy = gy - static_cast<double>(iy);
      for (std::size_t x = 0; x < dims.width; ++x) {
        const double gx = static_cast<double>(x) * (kGrid - 1) / std::max<std::size_t>(1, dims.width - 1);
        const std::size_t ix = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
        const double fx = gx - static_cast<double>(ix);
        const double top = lattice[iy * kGrid + ix] * (1 - fx) + lattice[iy * kGrid + ix + 1] * fx;
        const double bot = lattice[(iy + 1) * kGrid + ix] * (1 - fx) + lattice[(iy + 1) * kGrid + ix + 1] * fx;
        out[(c * dims.height + y) * dims.width + x] = static_cast<std::uint8_t>(std::lround(top * (1 - fy) + bot * fy));
      }
    }
  }
  return out;
}

// Alpha-blends a white glyph with its top-left corner at (x0, y0), wrapping
// around the frame borders.
void draw_glyph(std::span<std::uint8_t> frame, const VideoDims& dims, const std::vector<float>& alpha,
                std::size_t size, std::size_t x0, std::size_t y0) {
  for (std::size_t gy = 0; gy < size; ++gy) {
    const std::size_t y = (y0 + gy) % dims.height;
    for (std::size_t gx = 0; gx < size; ++gx) {
      const float a = alpha[gy * size + gx];
      if (a <= 0.0f) continue;
      const std::size_t x = (x0 + gx) % dims.width;
      for (std::size_t c = 0; c < dims.channels; ++c) {
        auto& px = frame[(c * dims.height + y) * dims.width + x];
        px = static_cast<std::uint8_t>(std::lround(px * (1.0f - a) + 255.0f * a));
      }
    }
  }
}

const std::vector<std::uint8_t>& pick_glyph(const GlyphBank& bank, std::uint8_t digit, Rng& rng) {
  const auto& pool = bank.by_digit[digit];
  if (pool.empty()) throw std::invalid_argument("glyph bank has no samples of digit " + std::to_string(digit));
  return pool[uniform_index(rng, 0, pool.size() - 1)];
}

}  // namespace

VideoSample generate_video(const DatasetSpec& spec, const GlyphBank& glyphs, std::uint32_t split, std::size_t index) {
  const VideoDims& dims = spec.dims;
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), split,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng(seq);

  VideoSample video;
  // Cycling labels keeps every class within one video of a quarter per split.
  video.label = static_cast<std::uint8_t>(index % kMotionClasses);
  video.pixels.assign(dims.video_bytes(), 0);
  video.relevance.assign(dims.frames, true);

  // Distractor chunk.
  std::size_t chunk_begin = 0, chunk_len = 0;
  DistractorKind kind = DistractorKind::kBackground;
  {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < spec.distractors.size(); ++k) {
      acc += spec.distractors[k].probability;
      if (u < acc) {
        kind = static_cast<DistractorKind>(k);
        const auto& cfg = spec.distractors[k];
        chunk_len = uniform_index(rng, cfg.min_length, cfg.max_length);
        chunk_begin = uniform_index(rng, 0, dims.frames - chunk_len);
        break;
      }
    }
  }
  for (std::size_t f = chunk_begin; f < chunk_begin + chunk_len; ++f) video.relevance[f] = false;

  const auto background = value_noise_background(dims, rng);
  const std::uint8_t digit = static_cast<std::uint8_t>(uniform_index(rng, 0, kFirstForeignDigit - 1));
  const auto target = resample_glyph(pick_glyph(glyphs, digit, rng), glyphs.rows, glyphs.cols, spec.glyph_size);
  const std::uint8_t foreign_digit = static_cast<std::uint8_t>(uniform_index(rng, kFirstForeignDigit, 9));
  const auto foreign = resample_glyph(pick_glyph(glyphs, foreign_digit, rng), glyphs.rows, glyphs.cols, spec.glyph_size);

  const std::size_t start_x = uniform_index(rng, 0, dims.width - 1);
  const std::size_t start_y = uniform_index(rng, 0, dims.height - 1);
  const auto motion = static_cast<Motion>(video.label);

  std::size_t step = 0;
  for (std::size_t f = 0; f < dims.frames; ++f) {
    auto frame = std::span(video.pixels).subspan(f * dims.frame_bytes(), dims.frame_bytes());
    if (video.relevance[f]) {
      std::copy(background.begin(), background.end(), frame.begin());
      const std::size_t d = step * spec.velocity;
      std::size_t x = start_x, y = start_y;
      switch (motion) {
        case Motion::kUp: y = (start_y + dims.height - d % dims.height) % dims.height; break;
        case Motion::kDown: y = (start_y + d) % dims.height; break;
        case Motion::kLeft: x = (start_x + dims.width - d % dims.width) % dims.width; break;
        case Motion::kRight: x = (start_x + d) % dims.width; break;
      }
      draw_glyph(frame, dims, target, spec.glyph_size, x, y);
      ++step;
      continue;
    }
    switch (kind) {
      case DistractorKind::kBlack:
        break;
      case DistractorKind::kBackground:
        std::copy(background.begin(), background.end(), frame.begin());
        break;
      case DistractorKind::kForeignDigit:
        std::copy(background.begin(), background.end(), frame.begin());
        draw_glyph(frame, dims, foreign, spec.glyph_size, uniform_index(rng, 0, dims.width - 1),
                   uniform_index(rng, 0, dims.height - 1));
        break;
    }
  }
  return video;
}

Dataset generate(const DatasetSpec& spec, const GlyphBank& glyphs) {
  spec.validate();
  Dataset ds;
  ds.train.dims = ds.test.dims = spec.dims;
  ds.train.videos.reserve(spec.train_count);
  for (std::size_t i = 0; i < spec.train_count; ++i) ds.train.videos.push_back(generate_video(spec, glyphs, 0, i));
  ds.test.videos.reserve(spec.test_count);
  for (std::size_t i = 0; i < spec.test_count; ++i) ds.test.videos.push_back(generate_video(spec, glyphs, 1, i));
  return ds;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_collection(const VideoCollection& c) {
  if (c.videos.empty()) throw std::invalid_argument("write dataset: collection is empty");
  ByteWriter w;
  w.magic("FVDS");
  w.u32(kDatasetVersion);
  const std::size_t body_start = w.size();
  w.u32(static_cast<std::uint32_t>(c.videos.size()));
  w.u32(static_cast<std::uint32_t>(c.dims.frames));
  w.u32(static_cast<std::uint32_t>(c.dims.channels));
  w.u32(static_cast<std::uint32_t>(c.dims.height));
  w.u32(static_cast<std::uint32_t>(c.dims.width));
  const std::size_t mask_bytes = (c.dims.frames + 7) / 8;
  for (const auto& v : c.videos) {
    if (v.pixels.size() != c.dims.video_bytes() || v.relevance.size() != c.dims.frames) {
      throw std::invalid_argument("write dataset: video does not match collection dimensions");
    }
    w.u8(v.label);
    std::vector<std::uint8_t> mask(mask_bytes, 0);
    for (std::size_t f = 0; f < c.dims.frames; ++f) {
      if (v.relevance[f]) mask[f / 8] |= static_cast<std::uint8_t>(1u << (f % 8));
    }
    w.raw(mask);
    w.raw(v.pixels);
  }
  const std::uint32_t crc = crc32(std::span(w.bytes()).subspan(body_start));
  w.u32(crc);
  return w.bytes();
}

VideoCollection decode_collection(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  r.expect_magic("FVDS");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  if (r.remaining() < 4) r.fail("file too short for a checksum");
  const std::size_t body_start = r.offset();
  const auto body = bytes.subspan(body_start, bytes.size() - body_start - 4);
  ByteReader tail(bytes.subspan(bytes.size() - 4), "dataset trailer");
  if (crc32(body) != tail.u32()) {
    throw FormatError("dataset: checksum mismatch over bytes [" + std::to_string(body_start) + ", " +
                      std::to_string(bytes.size() - 4) + ")");
  }
  ByteReader b(body, "dataset body");
  VideoCollection c;
  const std::uint32_t count = b.u32();
  c.dims.frames = b.u32();
  c.dims.channels = b.u32();
  c.dims.height = b.u32();
  c.dims.width = b.u32();
  if (count == 0) b.fail("empty collection");
  const std::size_t mask_bytes = (c.dims.frames + 7) / 8;
  const std::size_t record = 1 + mask_bytes + c.dims.video_bytes();
  if (b.remaining() != static_cast<std::size_t>(count) * record) {
    b.fail("expected " + std::to_string(static_cast<std::size_t>(count) * record) + " bytes of video records, " +
           std::to_string(b.remaining()) + " available");
  }
  c.videos.resize(count);
  for (auto& v : c.videos) {
    v.label = b.u8();
    if (v.label >= kMotionClasses) b.fail("label " + std::to_string(v.label) + " out of range");
    const auto mask = b.raw(mask_bytes);
    v.relevance.resize(c.dims.frames);
    for (std::size_t f = 0; f < c.dims.frames; ++f) v.relevance[f] = (mask[f / 8] >> (f % 8)) & 1u;
    const auto px = b.raw(c.dims.video_bytes());
    v.pixels.assign(px.begin(), px.end());
  }
  return c;
}

void write_collection(const std::string& path, const VideoCollection& collection) {
  write_file_bytes(path, encode_collection(collection));
}

VideoCollection read_collection(const std::string& path) { return decode_collection(read_file_bytes(path)); }

template <typename T>
Tensor<T> video_tensor(const VideoCollection& c, std::size_t index) {
  const auto& px = c.videos.at(index).pixels;
  Tensor<T> t({c.dims.frames, c.dims.channels, c.dims.height, c.dims.width});
  constexpr T kScale = T{1} / T{127.5};
  for (std::size_t i = 0; i < px.size(); ++i) t[i] = static_cast<T>(px[i]) * kScale - T{1};
  return t;
}

template Tensor<float> video_tensor(const VideoCollection&, std::size_t);
template Tensor<double> video_tensor(const VideoCollection&, std::size_t);

}  // namespace fvar
