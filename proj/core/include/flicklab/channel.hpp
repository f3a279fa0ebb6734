#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flicklab/flicker.hpp"
#include "flicklab/video.hpp"

namespace flicklab {

// Additive light model of an RGB bulb filmed by a camera: the commanded
// offsets are quantized to the bulb's color resolution, held while the bulb
// cannot update faster than the camera films, and desynchronized by one
// seeded latency jitter per run.
struct ChannelConfig {
  int levels_per_channel = 256;  // bulb color resolution
  double gain = 0.25;            // peak additive intensity in pixel units
  double baseline_level = 0.5;   // operating point that allows +/- offsets
  double max_updates_per_second = 15.0;
  double camera_fps = 30.0;
  int latency_jitter_frames = 1;  // uniform jitter bound, in frames
  std::uint64_t seed = 0;

  void validate() const;
  // Offset grid step: 2*gain/(levels_per_channel - 1), baseline-centered.
  double level_step() const;
  // Frames per commanded value: ceil(camera_fps / max_updates_per_second).
  int hold_span() const;
};

struct RealizationLog {
  int applied_jitter = 0;
  int hold_span = 1;
  double level_step = 0.0;
  std::vector<std::vector<int>> commanded_levels;  // per span start, offset level per channel
};

struct RealizedPerturbation {
  FlickerPerturbation values;
  RealizationLog log;
};

// Quantize each entry to the nearest representable level (clamped to
// [-gain, +gain]), hold values over hold_span frames, then cyclically shift
// the sequence by a seeded jitter in [-latency_jitter_frames, +latency_jitter_frames].
RealizedPerturbation realize(const FlickerPerturbation& delta, const ChannelConfig& config);

// Adds the realized per-frame vectors to all pixels and clamps to [0,1];
// identical to apply_flicker with the realized sequence at offset 0
// (cyclic tiling when the sequence is shorter than the clip).
VideoClip simulate_capture(const VideoClip& clip, const RealizedPerturbation& realized);

std::string realization_log_json(const RealizedPerturbation& realized);

}  // namespace flicklab
