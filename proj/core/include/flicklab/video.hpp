#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flicklab {

// One frame: row-major, channel-interleaved samples in [0, 1].
struct Frame {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> samples;  // width*height*channels

  static Frame constant(int width, int height, int channels, double value);

  double at(int y, int x, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double& at(int y, int x, int c) {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Frame& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
};

struct VideoClip {
  std::vector<Frame> frames;
  double fps = 30.0;
  std::optional<int> label;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int channels() const { return frames.empty() ? 0 : frames.front().channels; }

  // Throws if frames are missing, shapes disagree, or samples leave [0,1].
  void validate() const;
};

// Contiguous frame range of one group of pictures. Ranges of consecutive
// indices tile [0, T): all have `length == G` except possibly the last.
struct GopView {
  int index = 0;
  int first_frame = 0;
  int length = 0;
};

// Clip manifest: JSON {width, height, fps, frames: [...], label?} next to
// one binary PPM (P6, maxval 255) file per frame.
VideoClip load_clip(const std::filesystem::path& manifest_path);
void save_clip(const VideoClip& clip, const std::filesystem::path& manifest_path);

double mse(const Frame& a, const Frame& b);
double mse(const VideoClip& a, const VideoClip& b);

// 10*log10(1/MSE) on [0,1] samples, capped at 99 dB when MSE == 0.
inline constexpr double kPsnrCap = 99.0;
double psnr_from_mse(double mse_value);
double psnr(const Frame& reference, const Frame& test);
double psnr(const VideoClip& reference, const VideoClip& test);

std::vector<GopView> partition_gops(int frame_count, int gop_size);
std::vector<GopView> partition_gops(const VideoClip& clip, int gop_size);

}  // namespace flicklab
