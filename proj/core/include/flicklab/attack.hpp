#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flicklab/classifier.hpp"
#include "flicklab/codec.hpp"
#include "flicklab/flicker.hpp"
#include "flicklab/video.hpp"

namespace flicklab {

enum class AttackMode { compression_only, joint, classification_only };

struct AttackConfig {
  double lambda = 256.0;   // weighs distortion in the compression loss; also
                           // sets the codec's operating point inside attacks
  double beta = -1.0;      // classification-loss weight; < 0 = auto-balance
                           // against the compression term at delta = 0
  double zeta = 0.1;       // regularizer weight
  double epsilon = 0.2;    // L-infinity budget
  int iterations = 100;    // offline iterations / universal steps
  double step_size = -1.0; // per-iteration L-infinity step; < 0 = epsilon/10
  double fd_step = 0.01;   // finite-difference probe size
  AttackMode mode = AttackMode::compression_only;
  std::optional<int> target_class;  // present = targeted classification loss
  std::uint64_t seed = 0;
  int minibatch = 4;  // universal attack only

  void validate() const;
  double resolved_step() const { return step_size > 0.0 ? step_size : epsilon / 10.0; }
};

struct LossBreakdown {
  double comp = 0.0;            // compression term, averaged over GOPs
  double classification = 0.0;  // margin term (unscaled)
  double thick = 0.0;
  double rough = 0.0;
  double total = 0.0;  // comp + beta*classification + zeta*(thick + rough)
};

// Compression loss of one GOP: -(sum over the GOP of
// rate_bits + lambda_weight * MSE(clean_t, decoded_t) * W * H), where the
// perturbed clip is encoded with `codec` in `rate_mode`. The lambda argument
// only weighs the distortion term; quantization follows codec.lambda.
double comp_loss(const VideoClip& clip, const FlickerPerturbation& delta, double lambda_weight,
                 int gop_index, const CodecConfig& codec, RateMode rate_mode);

// Classification margin on the decoded adversarial clip. The reference class
// is the model's prediction on the clean clip decoded in hard mode (the
// pipeline of record); the adversarial decode follows codec.mode.
// Untargeted: p[clean] - max_{c != clean} p[c].
// Targeted:   max_{c != target} p[c] - p[target].
double class_loss(const VideoClip& clean_clip, const FlickerPerturbation& delta,
                  const ClassifierModel& model, const CodecConfig& codec,
                  const std::optional<int>& target_class);

// Eq-style total: GOP-averaged compression term (skipped in
// classification-only mode) + beta * classification term (skipped in
// compression-only mode) + zeta * (r_thick + r_rough). Requires a resolved
// (non-negative) beta whenever the classification term participates.
LossBreakdown total_objective(const VideoClip& clip, const FlickerPerturbation& delta,
                              const AttackConfig& config, const CodecConfig& codec,
                              const ClassifierModel* model);

// Per-entry central difference (f(d + h e) - f(d - h e)) / (2h). The
// objective must be pure; probes run concurrently. Throws if any probe
// returns a non-finite value.
FlickerPerturbation estimate_gradient(const std::function<double(const FlickerPerturbation&)>& f,
                                      const FlickerPerturbation& at, double fd_step);

struct IterationStat {
  int iteration = 0;
  double comp = 0.0;
  double classification = 0.0;
  double thick = 0.0;
  double rough = 0.0;
  double total = 0.0;
  double bpp = 0.0;
  double psnr = 0.0;
  double class_prob = 0.0;  // probability of the clean class (0 when no model)
};

struct AttackReport {
  FlickerPerturbation delta;
  IterationStat initial;             // delta = 0 baseline (hard mode)
  std::vector<IterationStat> trace;  // accepted iterations only
  double clean_bpp = 0.0;
  double clean_psnr = 0.0;
  double adv_bpp = 0.0;
  double adv_psnr = 0.0;
  std::optional<int> clean_prediction;
  std::optional<int> adv_prediction;
  double resolved_beta = 0.0;
  double resolved_step = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

// Per-video attack: smooth-mode gradients (finite differences on the rate
// and distortion, analytic on the regularizers), signed L-infinity steps,
// projection onto the budget, and hard-mode monotone acceptance. The step
// halves whenever the hard objective would increase.
AttackReport attack_offline(const VideoClip& clip, const AttackConfig& config,
                            const CodecConfig& codec, const ClassifierModel* model = nullptr);

// Universal attack: the perturbation length equals the GOP size. Each step
// samples `minibatch` clips and one random temporal offset per clip,
// averages the estimated gradients, then steps and projects. Reported
// metrics are train-set means at offset 0. No acceptance test (stochastic
// minibatch objectives are not comparable across steps).
AttackReport attack_universal(const std::vector<VideoClip>& train_set, const AttackConfig& config,
                              const CodecConfig& codec, const ClassifierModel* model = nullptr);

std::string attack_report_json(const AttackReport& report);

// CSV columns: iteration, comp, class, thick, rough, total.
void write_trace_csv(const AttackReport& report, const std::filesystem::path& path);

}  // namespace flicklab
