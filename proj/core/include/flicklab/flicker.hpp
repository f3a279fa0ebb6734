#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flicklab/video.hpp"

namespace flicklab {

// Per-frame color offsets: one channels-vector per frame, added uniformly to
// every pixel of that frame (spatially constant by construction).
struct FlickerPerturbation {
  int frames = 0;
  int channels = 0;
  std::vector<double> values;  // frames*channels, index t*channels + c

  static FlickerPerturbation zeros(int frames, int channels);

  double at(int t, int c) const { return values[static_cast<std::size_t>(t) * channels + c]; }
  double& at(int t, int c) { return values[static_cast<std::size_t>(t) * channels + c]; }
  void validate() const;
};

// x'_t = clamp(x_t + shifted(delta, offset)[t mod delta.frames], 0, 1).
// A perturbation shorter than the clip (universal mode) tiles cyclically.
VideoClip apply_flicker(const VideoClip& clip, const FlickerPerturbation& delta, int offset);

// Cyclic temporal shift: result[t] = delta[(t + offset) mod frames].
FlickerPerturbation gamma_shift(const FlickerPerturbation& delta, int offset);

// Mean squared magnitude: sum of squared entries / (3*frames).
double r_thick(const FlickerPerturbation& delta);

// Energy of the first and second cyclic temporal differences / (3*frames).
double r_rough(const FlickerPerturbation& delta);

// Exact gradient of zeta*(r_thick + r_rough) with respect to every entry.
FlickerPerturbation regularizer_gradient(const FlickerPerturbation& delta, double zeta);

// Entrywise clamp to [-epsilon, epsilon].
FlickerPerturbation project_linf(FlickerPerturbation delta, double epsilon);

// I.i.d. entries uniform on [-epsilon, epsilon]; deterministic given seed.
FlickerPerturbation sample_uniform_flicker(int frames, int channels, double epsilon,
                                           std::uint64_t seed);

// Perturbation file: JSON {"T", "C", "epsilon", "values": [[r,g,b], ...]}.
void save_perturbation(const FlickerPerturbation& delta, double epsilon,
                       const std::filesystem::path& path);

struct LoadedPerturbation {
  FlickerPerturbation delta;
  double epsilon = 0.0;
};
LoadedPerturbation load_perturbation(const std::filesystem::path& path);

}  // namespace flicklab
