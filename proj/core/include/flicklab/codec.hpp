#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flicklab/video.hpp"

namespace flicklab {

// hard: integer quantization and exp-Golomb bit counts (the codec proper).
// smooth: identity quantization and a continuous rate surrogate; only used
// inside attack gradient estimation, never for reported metrics.
enum class RateMode { hard, smooth };

struct CodecConfig {
  int gop_size = 10;
  double lambda = 256.0;  // rate-distortion weight; larger = finer quantization
  int block_size = 8;
  int search_radius = 4;
  RateMode mode = RateMode::hard;

  // Quantizer step on the 0..255 coefficient scale: 16*sqrt(256/lambda).
  double quant_step() const;
  void validate() const;
};

struct MotionVector {
  int dx = 0;
  int dy = 0;
};

struct MotionField {
  int blocks_x = 0;
  int blocks_y = 0;
  std::vector<MotionVector> vectors;  // row-major by block
};

// Orthonormal 2-D DCT over block_size x block_size values (row-major).
void forward_transform_block(std::span<const double> block, std::span<double> coeffs,
                             int block_size);
void inverse_transform_block(std::span<const double> coeffs, std::span<double> block,
                             int block_size);

// hard: q*round(c/q), ties away from zero. smooth: identity.
std::vector<double> quantize(std::span<const double> coeffs, double quant_step, RateMode mode);

// Order-0 exp-Golomb code length of a signed symbol.
int symbol_bits(std::int64_t symbol);

// Continuous surrogate of the exp-Golomb length of round(c/q):
// sum of 2*log2(1 + 2|c|/q) + 1 over the coefficients.
double smooth_rate(std::span<const double> coeffs, double quant_step);

// Exhaustive SAD search over [-search_radius, +search_radius]^2 per block.
// Ties prefer smallest |dx|+|dy|, then smallest dy, then smallest dx.
// Out-of-bounds reference reads clamp to the frame edge.
MotionField block_match(const Frame& reference, const Frame& target, const CodecConfig& config);

// Copies each block from the displaced reference position (edge-clamped).
Frame motion_compensate(const Frame& reference, const MotionField& motion, int block_size);

struct FrameBitstream {
  char frame_type = 'I';  // 'I' or 'P'
  RateMode mode = RateMode::hard;
  int width = 0;  // original (unpadded) frame geometry
  int height = 0;
  int channels = 0;
  double motion_bits = 0.0;  // integral in hard mode
  double residual_bits = 0.0;
  double total_bits = 0.0;
  MotionField motion;                          // empty for I-frames
  std::vector<std::int32_t> residual_symbols;  // hard mode only; per channel, block raster order
};

// Decoded frames of the current GOP in coding order; empty exactly before
// the first frame of each GOP is decoded.
struct ReferenceBuffer {
  std::vector<Frame> frames;

  bool empty() const { return frames.empty(); }
  const Frame& last() const { return frames.back(); }
  void push(Frame frame) { frames.push_back(std::move(frame)); }
  void reset() { frames.clear(); }
};

struct EncodedFrame {
  FrameBitstream stream;
  Frame decoded;
};

// I-frame when refs is empty, else P-frame predicted from the last decoded
// reference. The decoded frame is the decode of the emitted symbols,
// clamped to [0,1]; decode_frame(stream, refs, config) reproduces it
// bit-exactly in hard mode.
EncodedFrame encode_frame(const Frame& input, const ReferenceBuffer& refs,
                          const CodecConfig& config);
Frame decode_frame(const FrameBitstream& stream, const ReferenceBuffer& refs,
                   const CodecConfig& config);

struct CodedClip {
  std::vector<FrameBitstream> frames;
  VideoClip decoded;
  double bpp = 0.0;
  double psnr_vs = 0.0;  // against the caller-supplied distortion reference
};

// GOP-structured encode: the reference buffer resets at every GOP start, so
// each GOP opens with an I-frame. bpp = total bits / (T*W*H); psnr_vs is
// measured against distortion_reference (normally the clean clip).
CodedClip encode_clip(const VideoClip& clip, const CodecConfig& config,
                      const VideoClip& distortion_reference);

// JSON summary: per-frame {type, motion_bits, residual_bits, total_bits},
// clip-level {bpp, psnr}.
std::string coded_clip_summary_json(const CodedClip& coded);

}  // namespace flicklab
