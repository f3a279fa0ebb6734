#include "flicklab/flicker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "flicklab/rng.hpp"
#include "json.hpp"

namespace flicklab {

namespace {

// Non-negative remainder for offsets of any sign.
int cyclic_index(int t, int period) {
  const int m = t % period;
  return m < 0 ? m + period : m;
}

}  // namespace

FlickerPerturbation FlickerPerturbation::zeros(int frames, int channels) {
  FlickerPerturbation d;
  d.frames = frames;
  d.channels = channels;
  d.values.assign(static_cast<std::size_t>(frames) * channels, 0.0);
  return d;
}

void FlickerPerturbation::validate() const {
  if (frames < 1 || channels < 1)
    throw std::invalid_argument("perturbation needs frames >= 1 and channels >= 1");
  if (values.size() != static_cast<std::size_t>(frames) * channels)
    throw std::invalid_argument("perturbation value count does not match frames*channels");
}

VideoClip apply_flicker(const VideoClip& clip, const FlickerPerturbation& delta, int offset) {
  delta.validate();
  if (clip.channels() != delta.channels)
    throw std::invalid_argument("apply_flicker: channel counts disagree");

  VideoClip out = clip;
  for (int t = 0; t < clip.frame_count(); ++t) {
    const int src = cyclic_index(t % delta.frames + offset, delta.frames);
    Frame& frame = out.frames[t];
    const int channels = frame.channels;
    for (std::size_t i = 0; i < frame.samples.size(); ++i) {
      const double v = frame.samples[i] + delta.values[static_cast<std::size_t>(src) * channels +
                                                       static_cast<int>(i % channels)];
      frame.samples[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

FlickerPerturbation gamma_shift(const FlickerPerturbation& delta, int offset) {
  delta.validate();
  FlickerPerturbation out = delta;
  for (int t = 0; t < delta.frames; ++t) {
    const int src = cyclic_index(t + offset, delta.frames);
    for (int c = 0; c < delta.channels; ++c) out.at(t, c) = delta.at(src, c);
  }
  return out;
}

double r_thick(const FlickerPerturbation& delta) {
  delta.validate();
  double sum = 0.0;
  for (double v : delta.values) sum += v * v;
  return sum / (3.0 * delta.frames);
}

double r_rough(const FlickerPerturbation& delta) {
  delta.validate();
  if (delta.frames < 2) throw std::invalid_argument("r_rough needs at least 2 frames");
  const int frames = delta.frames;
  const int channels = delta.channels;
  double first = 0.0, second = 0.0;
  for (int t = 0; t < frames; ++t) {
    const int next = cyclic_index(t + 1, frames);
    const int prev = cyclic_index(t - 1, frames);
    for (int c = 0; c < channels; ++c) {
      const double d1 = delta.at(next, c) - delta.at(t, c);
      const double d2 = delta.at(prev, c) - 2.0 * delta.at(t, c) + delta.at(next, c);
      first += d1 * d1;
      second += d2 * d2;
    }
  }
  return (first + second) / (3.0 * frames);
}

FlickerPerturbation regularizer_gradient(const FlickerPerturbation& delta, double zeta) {
  delta.validate();
  if (delta.frames < 2)
    throw std::invalid_argument("regularizer_gradient needs at least 2 frames");
  const int frames = delta.frames;
  const int channels = delta.channels;
  const double norm = zeta / (3.0 * frames);

  FlickerPerturbation grad = FlickerPerturbation::zeros(frames, channels);
  // Second-difference sequence is reused by its own gradient (chain rule on
  // the cyclic stencil).
  std::vector<double> second(delta.values.size());
  for (int t = 0; t < frames; ++t) {
    const int next = cyclic_index(t + 1, frames);
    const int prev = cyclic_index(t - 1, frames);
    for (int c = 0; c < channels; ++c)
      second[static_cast<std::size_t>(t) * channels + c] =
          delta.at(prev, c) - 2.0 * delta.at(t, c) + delta.at(next, c);
  }
  for (int t = 0; t < frames; ++t) {
    const int next = cyclic_index(t + 1, frames);
    const int prev = cyclic_index(t - 1, frames);
    for (int c = 0; c < channels; ++c) {
      const double thick_part = 2.0 * delta.at(t, c);
      const double rough_first =
          2.0 * (2.0 * delta.at(t, c) - delta.at(prev, c) - delta.at(next, c));
      const double s_prev = second[static_cast<std::size_t>(prev) * channels + c];
      const double s_here = second[static_cast<std::size_t>(t) * channels + c];
      const double s_next = second[static_cast<std::size_t>(next) * channels + c];
      const double rough_second = 2.0 * (s_prev - 2.0 * s_here + s_next);
      grad.at(t, c) = norm * (thick_part + rough_first + rough_second);
    }
  }
  return grad;
}

FlickerPerturbation project_linf(FlickerPerturbation delta, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
  for (double& v : delta.values) v = std::clamp(v, -epsilon, epsilon);
  return delta;
}

FlickerPerturbation sample_uniform_flicker(int frames, int channels, double epsilon,
                                           std::uint64_t seed) {
  if (epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
  FlickerPerturbation d = FlickerPerturbation::zeros(frames, channels);
  SplitMix64 rng(seed);
  for (double& v : d.values) v = rng.uniform(-epsilon, epsilon);
  return d;
}

void save_perturbation(const FlickerPerturbation& delta, double epsilon,
                       const std::filesystem::path& path) {
  delta.validate();
  nlohmann::json doc;
  doc["T"] = delta.frames;
  doc["C"] = delta.channels;
  doc["epsilon"] = epsilon;
  nlohmann::json values = nlohmann::json::array();
  for (int t = 0; t < delta.frames; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < delta.channels; ++c) row.push_back(delta.at(t, c));
    values.push_back(std::move(row));
  }
  doc["values"] = std::move(values);

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write perturbation file: " + path.string());
  out << doc.dump(2) << "\n";
}

LoadedPerturbation load_perturbation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open perturbation file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed perturbation file " + path.string() + ": " + e.what());
  }

  LoadedPerturbation loaded;
  loaded.epsilon = doc.at("epsilon").get<double>();
  const int frames = doc.at("T").get<int>();
  const int channels = doc.at("C").get<int>();
  loaded.delta = FlickerPerturbation::zeros(frames, channels);
  const auto& values = doc.at("values");
  if (static_cast<int>(values.size()) != frames)
    throw std::runtime_error("perturbation file row count disagrees with T");
  for (int t = 0; t < frames; ++t)
    for (int c = 0; c < channels; ++c) loaded.delta.at(t, c) = values[t][c].get<double>();
  return loaded;
}

}  // namespace flicklab
