#include "flicklab/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace flicklab {

namespace {

constexpr double kPixelScale = 255.0;

[[noreturn]] void fail(const std::string& message) { throw std::runtime_error(message); }

// --- DCT basis cache ---

const std::vector<double>& dct_basis(int block_size) {
  static std::map<int, std::vector<double>> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(block_size);
  if (it != cache.end()) return it->second;

  const int n = block_size;
  std::vector<double> basis(static_cast<std::size_t>(n) * n);
  for (int u = 0; u < n; ++u) {
    const double scale = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int x = 0; x < n; ++x) {
      basis[static_cast<std::size_t>(u) * n + x] =
          scale * std::cos((2 * x + 1) * u * std::numbers::pi / (2.0 * n));
    }
  }
  return cache.emplace(block_size, std::move(basis)).first->second;
}

// out = M * in * M^T (forward) or M^T * in * M (inverse); all n x n row-major.
void transform_2d(std::span<const double> in, std::span<double> out, const double* m, int n,
                  bool transpose) {
  std::vector<double> tmp(static_cast<std::size_t>(n) * n);
  // tmp = A * in, where A is M (forward) or M^T (inverse)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) {
        const double a = transpose ? m[k * n + i] : m[i * n + k];
        sum += a * in[static_cast<std::size_t>(k) * n + j];
      }
      tmp[static_cast<std::size_t>(i) * n + j] = sum;
    }
  }
  // out = tmp * A^T
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) {
        const double a = transpose ? m[k * n + j] : m[j * n + k];
        sum += tmp[static_cast<std::size_t>(i) * n + k] * a;
      }
      out[static_cast<std::size_t>(i) * n + j] = sum;
    }
  }
}

void check_block_shape(std::size_t size, int block_size) {
  if (block_size < 1) throw std::invalid_argument("block_size must be >= 1");
  if (size != static_cast<std::size_t>(block_size) * block_size)
    throw std::invalid_argument("block buffer size does not match block_size^2");
}

// --- padding helpers ---

int padded_extent(int extent, int block_size) {
  return (extent + block_size - 1) / block_size * block_size;
}

Frame pad_to_blocks(const Frame& frame, int block_size) {
  const int pw = padded_extent(frame.width, block_size);
  const int ph = padded_extent(frame.height, block_size);
  if (pw == frame.width && ph == frame.height) return frame;
  Frame out;
  out.width = pw;
  out.height = ph;
  out.channels = frame.channels;
  out.samples.resize(static_cast<std::size_t>(pw) * ph * frame.channels);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, frame.height - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, frame.width - 1);
      for (int c = 0; c < frame.channels; ++c) out.at(y, x, c) = frame.at(sy, sx, c);
    }
  }
  return out;
}

Frame crop(const Frame& frame, int width, int height) {
  if (frame.width == width && frame.height == height) return frame;
  Frame out;
  out.width = width;
  out.height = height;
  out.channels = frame.channels;
  out.samples.resize(static_cast<std::size_t>(width) * height * frame.channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < frame.channels; ++c) out.at(y, x, c) = frame.at(y, x, c);
  return out;
}

// --- motion search on padded frames ---

struct Candidate {
  double sad = 0.0;
  int dx = 0;
  int dy = 0;

  bool better_than(const Candidate& other) const {
    if (sad != other.sad) return sad < other.sad;
    const int l1 = std::abs(dx) + std::abs(dy);
    const int ol1 = std::abs(other.dx) + std::abs(other.dy);
    if (l1 != ol1) return l1 < ol1;
    if (dy != other.dy) return dy < other.dy;
    return dx < other.dx;
  }
};

double block_sad(const Frame& reference, const Frame& target, int bx, int by, int n, int dx,
                 int dy, double cutoff) {
  const int w = reference.width;
  const int h = reference.height;
  const int c = reference.channels;
  double sum = 0.0;
  const bool inside = bx + dx >= 0 && by + dy >= 0 && bx + n + dx <= w && by + n + dy <= h;
  if (inside) {
    for (int y = 0; y < n; ++y) {
      const double* tp = &target.samples[(static_cast<std::size_t>(by + y) * w + bx) * c];
      const double* rp =
          &reference.samples[(static_cast<std::size_t>(by + y + dy) * w + bx + dx) * c];
      for (int i = 0; i < n * c; ++i) sum += std::abs(tp[i] - rp[i]);
      if (sum > cutoff) return sum;
    }
  } else {
    for (int y = 0; y < n; ++y) {
      const int ry = std::clamp(by + y + dy, 0, h - 1);
      for (int x = 0; x < n; ++x) {
        const int rx = std::clamp(bx + x + dx, 0, w - 1);
        for (int ch = 0; ch < c; ++ch)
          sum += std::abs(target.at(by + y, bx + x, ch) - reference.at(ry, rx, ch));
      }
      if (sum > cutoff) return sum;
    }
  }
  return sum;
}

MotionField block_match_padded(const Frame& reference, const Frame& target,
                               const CodecConfig& config) {
  const int n = config.block_size;
  const int radius = config.search_radius;
  MotionField field;
  field.blocks_x = target.width / n;
  field.blocks_y = target.height / n;
  field.vectors.resize(static_cast<std::size_t>(field.blocks_x) * field.blocks_y);

  for (int byi = 0; byi < field.blocks_y; ++byi) {
    for (int bxi = 0; bxi < field.blocks_x; ++bxi) {
      Candidate best{block_sad(reference, target, bxi * n, byi * n, n, 0, 0,
                               std::numeric_limits<double>::infinity()),
                     0, 0};
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx == 0 && dy == 0) continue;
          // Cutoff at the current best: a partial sum strictly above it can
          // never win, while exact ties must still finish for the tie rule.
          Candidate cand{block_sad(reference, target, bxi * n, byi * n, n, dx, dy, best.sad), dx,
                         dy};
          if (cand.better_than(best)) best = cand;
        }
      }
      field.vectors[static_cast<std::size_t>(byi) * field.blocks_x + bxi] = {best.dx, best.dy};
    }
  }
  return field;
}

Frame motion_compensate_padded(const Frame& reference, const MotionField& motion, int n) {
  Frame out = reference;  // shape template; every sample overwritten below
  const int w = reference.width;
  const int h = reference.height;
  const int c = reference.channels;
  for (int byi = 0; byi < motion.blocks_y; ++byi) {
    for (int bxi = 0; bxi < motion.blocks_x; ++bxi) {
      const MotionVector mv =
          motion.vectors[static_cast<std::size_t>(byi) * motion.blocks_x + bxi];
      for (int y = 0; y < n; ++y) {
        const int ry = std::clamp(byi * n + y + mv.dy, 0, h - 1);
        for (int x = 0; x < n; ++x) {
          const int rx = std::clamp(bxi * n + x + mv.dx, 0, w - 1);
          for (int ch = 0; ch < c; ++ch)
            out.at(byi * n + y, bxi * n + x, ch) = reference.at(ry, rx, ch);
        }
      }
    }
  }
  return out;
}

// Transform-codes one padded plane difference (already on the 0..255 scale).
// In hard mode appends symbols and exp-Golomb bits; in smooth mode only
// accumulates the continuous rate. recon (same size) receives the
// reconstruction in hard mode.
void code_plane(const std::vector<double>& plane, int width, int height, int n, double q,
                RateMode mode, double& bits, std::vector<std::int32_t>* symbols,
                std::vector<double>* recon) {
  const auto& basis = dct_basis(n);
  std::vector<double> block(static_cast<std::size_t>(n) * n);
  std::vector<double> coeffs(block.size());
  for (int by = 0; by < height; by += n) {
    for (int bx = 0; bx < width; bx += n) {
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          block[static_cast<std::size_t>(y) * n + x] =
              plane[static_cast<std::size_t>(by + y) * width + bx + x];
      transform_2d(block, coeffs, basis.data(), n, false);
      if (mode == RateMode::smooth) {
        bits += smooth_rate(coeffs, q);
        continue;
      }
      for (double& cv : coeffs) {
        const auto s = static_cast<std::int64_t>(std::llround(cv / q));
        bits += symbol_bits(s);
        if (symbols) symbols->push_back(static_cast<std::int32_t>(s));
        cv = static_cast<double>(s) * q;
      }
      if (recon) {
        transform_2d(coeffs, block, basis.data(), n, true);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            (*recon)[static_cast<std::size_t>(by + y) * width + bx + x] =
                block[static_cast<std::size_t>(y) * n + x];
      }
    }
  }
}

// Rebuilds one plane from stored symbols.
void decode_plane(std::span<const std::int32_t> symbols, int width, int height, int n, double q,
                  std::vector<double>& recon) {
  const auto& basis = dct_basis(n);
  std::vector<double> block(static_cast<std::size_t>(n) * n);
  std::vector<double> coeffs(block.size());
  std::size_t pos = 0;
  for (int by = 0; by < height; by += n) {
    for (int bx = 0; bx < width; bx += n) {
      for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] = symbols[pos++] * q;
      transform_2d(coeffs, block, basis.data(), n, true);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          recon[static_cast<std::size_t>(by + y) * width + bx + x] =
              block[static_cast<std::size_t>(y) * n + x];
    }
  }
}

std::vector<double> extract_plane(const Frame& frame, int channel, double scale) {
  std::vector<double> plane(static_cast<std::size_t>(frame.width) * frame.height);
  const double* src = frame.samples.data() + channel;
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = src[i * frame.channels] * scale;
  return plane;
}

}  // namespace

double CodecConfig::quant_step() const { return 16.0 * std::sqrt(256.0 / lambda); }

void CodecConfig::validate() const {
  if (gop_size < 1) throw std::invalid_argument("gop_size must be >= 1");
  if (lambda <= 0.0) throw std::invalid_argument("lambda must be > 0");
  if (block_size < 1) throw std::invalid_argument("block_size must be >= 1");
  if (search_radius < 0) throw std::invalid_argument("search_radius must be >= 0");
  if (!(quant_step() > 0.0)) throw std::invalid_argument("quant_step must be > 0");
}

void forward_transform_block(std::span<const double> block, std::span<double> coeffs,
                             int block_size) {
  check_block_shape(block.size(), block_size);
  check_block_shape(coeffs.size(), block_size);
  transform_2d(block, coeffs, dct_basis(block_size).data(), block_size, false);
}

void inverse_transform_block(std::span<const double> coeffs, std::span<double> block,
                             int block_size) {
  check_block_shape(coeffs.size(), block_size);
  check_block_shape(block.size(), block_size);
  transform_2d(coeffs, block, dct_basis(block_size).data(), block_size, true);
}

std::vector<double> quantize(std::span<const double> coeffs, double quant_step, RateMode mode) {
  if (!(quant_step > 0.0)) throw std::invalid_argument("quant_step must be > 0");
  std::vector<double> out(coeffs.begin(), coeffs.end());
  if (mode == RateMode::smooth) return out;
  for (double& c : out) c = quant_step * std::round(c / quant_step);
  return out;
}

int symbol_bits(std::int64_t symbol) {
  const std::uint64_t u = symbol > 0 ? static_cast<std::uint64_t>(2 * symbol - 1)
                                     : static_cast<std::uint64_t>(-2 * symbol);
  return 2 * (std::bit_width(u + 1) - 1) + 1;
}

double smooth_rate(std::span<const double> coeffs, double quant_step) {
  if (!(quant_step > 0.0)) throw std::invalid_argument("quant_step must be > 0");
  double bits = 0.0;
  for (double c : coeffs) bits += 2.0 * std::log2(1.0 + 2.0 * std::abs(c) / quant_step) + 1.0;
  return bits;
}

MotionField block_match(const Frame& reference, const Frame& target, const CodecConfig& config) {
  config.validate();
  if (!reference.same_shape(target)) fail("block_match: frame shapes disagree");
  return block_match_padded(pad_to_blocks(reference, config.block_size),
                            pad_to_blocks(target, config.block_size), config);
}

Frame motion_compensate(const Frame& reference, const MotionField& motion, int block_size) {
  const Frame padded = pad_to_blocks(reference, block_size);
  if (motion.blocks_x * block_size != padded.width ||
      motion.blocks_y * block_size != padded.height)
    fail("motion_compensate: motion grid does not match frame blocking");
  return crop(motion_compensate_padded(padded, motion, block_size), reference.width,
              reference.height);
}

EncodedFrame encode_frame(const Frame& input, const ReferenceBuffer& refs,
                          const CodecConfig& config) {
  config.validate();
  const int n = config.block_size;
  const double q = config.quant_step();
  const Frame padded = pad_to_blocks(input, n);

  FrameBitstream stream;
  stream.mode = config.mode;
  stream.width = input.width;
  stream.height = input.height;
  stream.channels = input.channels;

  Frame prediction;  // padded, only for P-frames
  if (refs.empty()) {
    stream.frame_type = 'I';
  } else {
    stream.frame_type = 'P';
    const Frame ref_padded = pad_to_blocks(refs.last(), n);
    if (!ref_padded.same_shape(padded)) fail("encode_frame: reference shape disagrees");
    stream.motion = block_match_padded(ref_padded, padded, config);
    for (const MotionVector& mv : stream.motion.vectors)
      stream.motion_bits += symbol_bits(mv.dx) + symbol_bits(mv.dy);
    prediction = motion_compensate_padded(ref_padded, stream.motion, n);
  }

  for (int c = 0; c < padded.channels; ++c) {
    std::vector<double> plane = extract_plane(padded, c, kPixelScale);
    if (stream.frame_type == 'P') {
      const std::vector<double> pred = extract_plane(prediction, c, kPixelScale);
      for (std::size_t i = 0; i < plane.size(); ++i) plane[i] -= pred[i];
    }
    code_plane(plane, padded.width, padded.height, n, q, config.mode, stream.residual_bits,
               config.mode == RateMode::hard ? &stream.residual_symbols : nullptr, nullptr);
  }
  stream.total_bits = stream.motion_bits + stream.residual_bits;

  EncodedFrame result;
  if (config.mode == RateMode::smooth) {
    // Identity quantization: the decode is the (already clamped) input.
    result.decoded = input;
    for (double& v : result.decoded.samples) v = std::clamp(v, 0.0, 1.0);
  } else {
    result.decoded = decode_frame(stream, refs, config);
  }
  result.stream = std::move(stream);
  return result;
}

Frame decode_frame(const FrameBitstream& stream, const ReferenceBuffer& refs,
                   const CodecConfig& config) {
  config.validate();
  if (stream.mode == RateMode::smooth)
    fail("decode_frame: smooth-mode streams carry no symbols");
  if (stream.frame_type == 'P' && refs.empty())
    fail("decode_frame: P-frame needs a reference");

  const int n = config.block_size;
  const double q = config.quant_step();
  const int channels = stream.channels;

  Frame padded;
  if (stream.frame_type == 'P') {
    if (!refs.last().same_shape(
            Frame{stream.width, stream.height, stream.channels, {}}))
      fail("decode_frame: reference shape disagrees with bitstream");
    padded = motion_compensate_padded(pad_to_blocks(refs.last(), n), stream.motion, n);
  } else {
    padded = Frame::constant(padded_extent(stream.width, n), padded_extent(stream.height, n),
                             channels, 0.0);
  }

  const std::size_t plane_size = static_cast<std::size_t>(padded.width) * padded.height;
  if (stream.residual_symbols.size() != plane_size * channels)
    fail("decode_frame: symbol count disagrees with frame geometry");
  std::vector<double> recon(plane_size);
  for (int c = 0; c < channels; ++c) {
    const std::span<const std::int32_t> symbols(
        stream.residual_symbols.data() + static_cast<std::size_t>(c) * plane_size, plane_size);
    decode_plane(symbols, padded.width, padded.height, n, q, recon);
    for (std::size_t i = 0; i < plane_size; ++i) {
      const double v = padded.samples[i * channels + c] + recon[i] / kPixelScale;
      padded.samples[i * channels + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return crop(padded, stream.width, stream.height);
}

CodedClip encode_clip(const VideoClip& clip, const CodecConfig& config,
                      const VideoClip& distortion_reference) {
  config.validate();
  if (clip.frame_count() == 0) fail("encode_clip: empty clip");
  if (clip.frame_count() != distortion_reference.frame_count() ||
      !clip.frames.front().same_shape(distortion_reference.frames.front()))
    fail("encode_clip: distortion reference shape disagrees");

  CodedClip coded;
  coded.decoded.fps = clip.fps;
  coded.decoded.label = clip.label;
  ReferenceBuffer refs;
  for (int t = 0; t < clip.frame_count(); ++t) {
    if (t % config.gop_size == 0) refs.reset();
    EncodedFrame encoded = encode_frame(clip.frames[t], refs, config);
    refs.push(encoded.decoded);
    coded.frames.push_back(std::move(encoded.stream));
    coded.decoded.frames.push_back(std::move(encoded.decoded));
  }

  double total_bits = 0.0;
  for (const FrameBitstream& f : coded.frames) total_bits += f.total_bits;
  coded.bpp = total_bits / (static_cast<double>(clip.frame_count()) * clip.width() * clip.height());
  coded.psnr_vs = psnr(distortion_reference, coded.decoded);
  return coded;
}

std::string coded_clip_summary_json(const CodedClip& coded) {
  nlohmann::json doc;
  nlohmann::json frames = nlohmann::json::array();
  for (const FrameBitstream& f : coded.frames) {
    frames.push_back({{"type", std::string(1, f.frame_type)},
                      {"motion_bits", f.motion_bits},
                      {"residual_bits", f.residual_bits},
                      {"total_bits", f.total_bits}});
  }
  doc["frames"] = std::move(frames);
  doc["clip"] = {{"bpp", coded.bpp}, {"psnr", coded.psnr_vs}};
  return doc.dump(2);
}

}  // namespace flicklab
