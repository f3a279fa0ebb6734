#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "flicklab/rng.hpp"

namespace flicklab::detail {

// Smooth low-frequency texture: a small sum of 2-D cosines with integer
// frequencies (periodic in both axes, so toroidal shifts are seamless).
// Keeps most DCT energy in a handful of low coefficients, which is what
// natural video looks like to the codec.
struct CosineTexture {
  struct Wave {
    double fx, fy, amplitude;
    double phase[3];
  };
  double base[3];
  std::vector<Wave> waves;

  static CosineTexture random(SplitMix64& rng, double base_lo, double base_hi, double amp_lo,
                              double amp_hi, int wave_count) {
    CosineTexture t;
    for (double& b : t.base) b = rng.uniform(base_lo, base_hi);
    for (int i = 0; i < wave_count; ++i) {
      Wave w;
      w.fx = static_cast<double>(rng.uniform_int(0, 2));
      w.fy = static_cast<double>(rng.uniform_int(w.fx == 0 ? 1 : 0, 2));
      w.amplitude = rng.uniform(amp_lo, amp_hi);
      for (double& p : w.phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
      t.waves.push_back(w);
    }
    return t;
  }

  double sample(double u, double v, int c) const {
    double value = base[c];
    for (const Wave& w : waves)
      value += w.amplitude * std::cos(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase[c]);
    return value;
  }
};

}  // namespace flicklab::detail
