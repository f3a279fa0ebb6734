#include "flicklab/channel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "flicklab/rng.hpp"
#include "json.hpp"

namespace flicklab {

void ChannelConfig::validate() const {
  if (levels_per_channel < 2) throw std::invalid_argument("levels_per_channel must be >= 2");
  if (gain <= 0.0) throw std::invalid_argument("gain must be > 0");
  if (baseline_level < 0.0 || baseline_level > 1.0)
    throw std::invalid_argument("baseline_level must be in [0,1]");
  if (max_updates_per_second <= 0.0)
    throw std::invalid_argument("max_updates_per_second must be > 0");
  if (camera_fps <= 0.0) throw std::invalid_argument("camera_fps must be > 0");
  if (latency_jitter_frames < 0)
    throw std::invalid_argument("latency_jitter_frames must be >= 0");
}

double ChannelConfig::level_step() const { return 2.0 * gain / (levels_per_channel - 1); }

int ChannelConfig::hold_span() const {
  return static_cast<int>(std::ceil(camera_fps / max_updates_per_second));
}

RealizedPerturbation realize(const FlickerPerturbation& delta, const ChannelConfig& config) {
  config.validate();
  delta.validate();

  const double step = config.level_step();
  const std::int64_t half = (config.levels_per_channel - 1) / 2;
  const int span = config.hold_span();
  const int frames = delta.frames;
  const int channels = delta.channels;

  RealizedPerturbation out;
  out.values = FlickerPerturbation::zeros(frames, channels);
  out.log.hold_span = span;
  out.log.level_step = step;

  // Quantize the commanded value at each span start, hold it over the span.
  std::vector<std::vector<int>> span_levels;
  for (int start = 0; start < frames; start += span) {
    std::vector<int> levels(channels);
    for (int c = 0; c < channels; ++c) {
      const double wanted = std::clamp(delta.at(start, c), -config.gain, config.gain);
      const std::int64_t k = std::clamp<std::int64_t>(std::llround(wanted / step), -half, half);
      levels[c] = static_cast<int>(k);
      for (int t = start; t < std::min(start + span, frames); ++t)
        out.values.at(t, c) = static_cast<double>(k) * step;
    }
    span_levels.push_back(std::move(levels));
  }
  out.log.commanded_levels = std::move(span_levels);

  // One latency jitter per realization (constant command delay).
  int jitter = 0;
  if (config.latency_jitter_frames > 0) {
    SplitMix64 rng(config.seed);
    jitter = static_cast<int>(
        rng.uniform_int(-config.latency_jitter_frames, config.latency_jitter_frames));
  }
  out.log.applied_jitter = jitter;
  if (jitter != 0) out.values = gamma_shift(out.values, jitter);
  return out;
}

VideoClip simulate_capture(const VideoClip& clip, const RealizedPerturbation& realized) {
  if (clip.channels() != realized.values.channels)
    throw std::invalid_argument("simulate_capture: channel counts disagree");
  return apply_flicker(clip, realized.values, 0);
}

std::string realization_log_json(const RealizedPerturbation& realized) {
  nlohmann::json doc;
  doc["applied_jitter"] = realized.log.applied_jitter;
  doc["hold_span"] = realized.log.hold_span;
  doc["level_step"] = realized.log.level_step;
  doc["commanded_levels"] = realized.log.commanded_levels;
  nlohmann::json values = nlohmann::json::array();
  for (int t = 0; t < realized.values.frames; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < realized.values.channels; ++c) row.push_back(realized.values.at(t, c));
    values.push_back(std::move(row));
  }
  doc["values"] = std::move(values);
  return doc.dump(2);
}

}  // namespace flicklab
