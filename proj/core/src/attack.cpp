#include "flicklab/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "flicklab/csv.hpp"
#include "flicklab/parallel.hpp"
#include "flicklab/rng.hpp"
#include "json.hpp"

namespace flicklab {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

int cyclic_index(int t, int period) {
  const int m = t % period;
  return m < 0 ? m + period : m;
}

double margin_from_probs(const ClassProbabilities& probs, int clean_class,
                         const std::optional<int>& target) {
  const int pivot = target ? *target : clean_class;
  double best_other = -1.0;
  for (int c = 0; c < static_cast<int>(probs.p.size()); ++c)
    if (c != pivot) best_other = std::max(best_other, probs.p[c]);
  return target ? best_other - probs.p[pivot] : probs.p[pivot] - best_other;
}

// Regularizer gradient with the frames < 2 edge handled (roughness absent).
FlickerPerturbation safe_regularizer_gradient(const FlickerPerturbation& delta, double zeta) {
  if (delta.frames >= 2) return regularizer_gradient(delta, zeta);
  FlickerPerturbation grad = delta;
  const double k = zeta * 2.0 / (3.0 * delta.frames);
  for (double& v : grad.values) v *= k;
  return grad;
}

double safe_r_rough(const FlickerPerturbation& delta) {
  return delta.frames >= 2 ? r_rough(delta) : 0.0;
}

// Full hard-mode objective breakdown of an already-encoded adversarial clip.
struct HardEval {
  LossBreakdown breakdown;
  double bpp = 0.0;
  double psnr = 0.0;
  int prediction = -1;
  double clean_class_prob = 0.0;
};

HardEval evaluate_coded(const VideoClip& clean, const FlickerPerturbation& delta,
                        const CodedClip& coded, double lambda, AttackMode mode, double beta,
                        double zeta, const ClassifierModel* model, int clean_class,
                        const std::optional<int>& target) {
  HardEval ev;
  ev.bpp = coded.bpp;
  ev.psnr = coded.psnr_vs;

  if (mode != AttackMode::classification_only) {
    // GOP boundaries are wherever the coded stream restarts with an I-frame.
    const double wh = static_cast<double>(clean.width()) * clean.height();
    double comp = 0.0;
    double gop_sum = 0.0;
    int gop_count = 0;
    for (int t = 0; t < clean.frame_count(); ++t) {
      if (coded.frames[t].frame_type == 'I' && t > 0) {
        comp += -gop_sum;
        gop_sum = 0.0;
      }
      if (coded.frames[t].frame_type == 'I') ++gop_count;
      gop_sum += coded.frames[t].total_bits +
                 lambda * mse(clean.frames[t], coded.decoded.frames[t]) * wh;
    }
    comp += -gop_sum;
    ev.breakdown.comp = comp / gop_count;
  }
  if (mode != AttackMode::compression_only && model) {
    const ClassProbabilities probs = predict(*model, coded.decoded);
    ev.prediction = probs.argmax();
    ev.clean_class_prob = clean_class >= 0 ? probs.p[clean_class] : 0.0;
    ev.breakdown.classification = margin_from_probs(probs, clean_class, target);
  }
  ev.breakdown.thick = r_thick(delta);
  ev.breakdown.rough = safe_r_rough(delta);
  ev.breakdown.total =
      ev.breakdown.comp +
      (mode != AttackMode::compression_only ? beta * ev.breakdown.classification : 0.0) +
      zeta * (ev.breakdown.thick + ev.breakdown.rough);
  return ev;
}

// Smooth-mode objective (compression + scaled classification terms, no
// regularizers) with per-frame caching. In smooth mode a frame's decode is
// its own perturbed input, so displacing one perturbation entry only
// re-encodes the frames it colors and their direct successors in the GOP;
// everything else is reused from the base point.
class SmoothObjective {
 public:
  SmoothObjective(const VideoClip& clean, const CodecConfig& smooth_codec, double lambda,
                  AttackMode mode, double beta, const ClassifierModel* model, int clean_class,
                  std::optional<int> target, int offset)
      : clean_(clean),
        codec_(smooth_codec),
        lambda_(lambda),
        mode_(mode),
        beta_(beta),
        model_(model),
        clean_class_(clean_class),
        target_(target),
        offset_(offset),
        gops_(partition_gops(clean.frame_count(), smooth_codec.gop_size)),
        pixels_(static_cast<double>(clean.width()) * clean.height()) {}

  bool use_comp() const { return mode_ != AttackMode::classification_only; }
  bool use_class() const { return mode_ != AttackMode::compression_only; }

  void set_base(const FlickerPerturbation& delta) {
    base_ = delta;
    perturbed_ = apply_flicker(clean_, delta, offset_);
    const int frame_count = clean_.frame_count();
    if (use_comp()) {
      frame_bits_.assign(frame_count, 0.0);
      frame_mse_.assign(frame_count, 0.0);
      ReferenceBuffer refs;
      for (int t = 0; t < frame_count; ++t) {
        if (t % codec_.gop_size == 0) refs.reset();
        EncodedFrame encoded = encode_frame(perturbed_.frames[t], refs, codec_);
        frame_bits_[t] = encoded.stream.total_bits;
        frame_mse_[t] = mse(clean_.frames[t], encoded.decoded);
        refs.push(std::move(encoded.decoded));
      }
    }
    if (use_class()) {
      base_features_ = extract_features(perturbed_, model_->spec);
      base_margin_ =
          margin_from_probs(predict_from_features(*model_, base_features_), clean_class_, target_);
    }
  }

  double base_comp() const { return use_comp() ? comp_from(frame_bits_, frame_mse_) : 0.0; }
  double base_class() const { return use_class() ? base_margin_ : 0.0; }
  double base_value() const { return base_comp() + (use_class() ? beta_ * base_margin_ : 0.0); }

  // Objective with entry (frame, channel) of the base perturbation displaced
  // by signed_h. Thread-safe: reads shared caches, writes none.
  double probe(int entry, double signed_h) const {
    const int channels = base_.channels;
    const int period = base_.frames;
    const int frame_count = clean_.frame_count();
    const int row = entry / channels;
    const int channel = entry % channels;

    std::vector<double> delta_vec(channels);
    for (int c = 0; c < channels; ++c) delta_vec[c] = base_.at(row, c);
    delta_vec[channel] += signed_h;

    // Frames colored by this entry, given the application offset.
    std::vector<int> affected;
    for (int t = cyclic_index(row - offset_, period); t < frame_count; t += period)
      affected.push_back(t);
    if (affected.empty()) return base_value();

    std::vector<Frame> modified(affected.size());
    auto modified_of = [&](int t) -> const Frame* {
      for (std::size_t i = 0; i < affected.size(); ++i)
        if (affected[i] == t) return &modified[i];
      return nullptr;
    };
    for (std::size_t i = 0; i < affected.size(); ++i) {
      Frame f = clean_.frames[affected[i]];
      for (std::size_t s = 0; s < f.samples.size(); ++s)
        f.samples[s] = std::clamp(f.samples[s] + delta_vec[s % channels], 0.0, 1.0);
      modified[i] = std::move(f);
    }
    auto frame_at = [&](int t) -> const Frame& {
      const Frame* m = modified_of(t);
      return m ? *m : perturbed_.frames[t];
    };

    double result = 0.0;
    if (use_comp()) {
      std::vector<double> bits = frame_bits_;
      std::vector<double> mses = frame_mse_;
      std::vector<char> redo(frame_count, 0);
      for (int t : affected) {
        redo[t] = 1;
        if (t + 1 < frame_count && (t + 1) % codec_.gop_size != 0) redo[t + 1] = 1;
      }
      for (int t = 0; t < frame_count; ++t) {
        if (!redo[t]) continue;
        ReferenceBuffer refs;
        if (t % codec_.gop_size != 0) refs.push(frame_at(t - 1));
        EncodedFrame encoded = encode_frame(frame_at(t), refs, codec_);
        bits[t] = encoded.stream.total_bits;
        if (modified_of(t)) mses[t] = mse(clean_.frames[t], encoded.decoded);
      }
      result += comp_from(bits, mses);
    }
    if (use_class()) {
      const int grid = model_->spec.grid;
      const int block = grid * grid;
      std::vector<double> features = base_features_;
      std::vector<char> redo_pair(frame_count - 1, 0);
      for (int t : affected) {
        if (t - 1 >= 0) redo_pair[t - 1] = 1;
        if (t + 1 < frame_count) redo_pair[t] = 1;
      }
      for (int q = 0; q + 1 < frame_count; ++q) {
        if (!redo_pair[q]) continue;
        const std::vector<double> pair =
            pair_difference_features(frame_at(q), frame_at(q + 1), grid);
        std::copy(pair.begin(), pair.end(),
                  features.begin() + static_cast<std::ptrdiff_t>(q) * block);
      }
      result += beta_ * margin_from_probs(predict_from_features(*model_, features), clean_class_,
                                          target_);
    }
    return result;
  }

 private:
  double comp_from(const std::vector<double>& bits, const std::vector<double>& mses) const {
    double comp = 0.0;
    for (const GopView& g : gops_) {
      double gop_sum = 0.0;
      for (int t = g.first_frame; t < g.first_frame + g.length; ++t)
        gop_sum += bits[t] + lambda_ * mses[t] * pixels_;
      comp += -gop_sum;
    }
    return comp / static_cast<double>(gops_.size());
  }

  const VideoClip& clean_;
  CodecConfig codec_;
  double lambda_;
  AttackMode mode_;
  double beta_;
  const ClassifierModel* model_;
  int clean_class_;
  std::optional<int> target_;
  int offset_;
  std::vector<GopView> gops_;
  double pixels_;

  FlickerPerturbation base_;
  VideoClip perturbed_;
  std::vector<double> frame_bits_;
  std::vector<double> frame_mse_;
  std::vector<double> base_features_;
  double base_margin_ = 0.0;
};

// Hard-mode iterate with incremental single-entry sign flips. Negating one
// perturbation entry re-encodes only its GOP from the touched frame onward
// (hard decodes propagate inside the GOP and nowhere else). Used by the
// greedy sign-refinement pass: the global signed step cannot flip saturated
// entries one at a time, so equal-sign runs left over from the initial
// gradient signs would otherwise keep their frame differences at zero and
// undercharge the rate term.
class HardIterate {
 public:
  HardIterate(const VideoClip& clean, const CodecConfig& hard_codec, double lambda,
              AttackMode mode, double beta, double zeta, const ClassifierModel* model,
              int clean_class, std::optional<int> target)
      : clean_(clean),
        codec_(hard_codec),
        lambda_(lambda),
        mode_(mode),
        beta_(beta),
        zeta_(zeta),
        model_(model),
        clean_class_(clean_class),
        target_(target),
        pixels_(static_cast<double>(clean.width()) * clean.height()) {}

  void reset(const FlickerPerturbation& delta) {
    delta_ = delta;
    const int frame_count = clean_.frame_count();
    perturbed_ = apply_flicker(clean_, delta_, 0).frames;
    decoded_.resize(frame_count);
    bits_.assign(frame_count, 0.0);
    mse_.assign(frame_count, 0.0);
    ReferenceBuffer refs;
    for (int t = 0; t < frame_count; ++t) {
      if (t % codec_.gop_size == 0) refs.reset();
      EncodedFrame encoded = encode_frame(perturbed_[t], refs, codec_);
      bits_[t] = encoded.stream.total_bits;
      mse_[t] = mse(clean_.frames[t], encoded.decoded);
      decoded_[t] = encoded.decoded;
      refs.push(std::move(encoded.decoded));
    }
    if (use_class()) {
      features_.clear();
      for (int q = 0; q + 1 < frame_count; ++q) {
        const std::vector<double> block =
            pair_difference_features(decoded_[q], decoded_[q + 1], model_->spec.grid);
        features_.insert(features_.end(), block.begin(), block.end());
      }
      probs_ = predict_from_features(*model_, features_);
    }
    total_ = breakdown().total;
  }

  // Negate entry if the hard total does not increase; returns whether the
  // flip was committed.
  bool try_flip(int entry) {
    const int channels = delta_.channels;
    const int t = entry / channels;
    const int channel = entry % channels;
    if (delta_.at(t, channel) == 0.0) return false;

    FlickerPerturbation candidate = delta_;
    candidate.at(t, channel) = -candidate.at(t, channel);

    const int frame_count = clean_.frame_count();
    const int gop_end = std::min(t - t % codec_.gop_size + codec_.gop_size, frame_count);

    Frame new_perturbed = clean_.frames[t];
    for (std::size_t s = 0; s < new_perturbed.samples.size(); ++s)
      new_perturbed.samples[s] = std::clamp(
          new_perturbed.samples[s] + candidate.at(t, static_cast<int>(s % channels)), 0.0, 1.0);

    // Re-encode the GOP suffix against the cached decoded prefix.
    std::vector<Frame> new_decoded(gop_end - t);
    std::vector<double> new_bits(gop_end - t), new_mse(gop_end - t);
    ReferenceBuffer refs;
    if (t % codec_.gop_size != 0) refs.push(decoded_[t - 1]);
    for (int k = t; k < gop_end; ++k) {
      const Frame& input = k == t ? new_perturbed : perturbed_[k];
      EncodedFrame encoded = encode_frame(input, refs, codec_);
      new_bits[k - t] = encoded.stream.total_bits;
      new_mse[k - t] = mse(clean_.frames[k], encoded.decoded);
      new_decoded[k - t] = encoded.decoded;
      refs.push(std::move(encoded.decoded));
    }

    // Candidate totals from the patched per-frame terms.
    std::vector<double> bits = bits_, mses = mse_;
    for (int k = t; k < gop_end; ++k) {
      bits[k] = new_bits[k - t];
      mses[k] = new_mse[k - t];
    }
    std::vector<double> features = features_;
    ClassProbabilities probs = probs_;
    if (use_class()) {
      const int grid = model_->spec.grid;
      const int block = grid * grid;
      const int q_first = std::max(0, t - 1);
      const int q_last = std::min(frame_count - 2, gop_end - 1);
      auto decoded_at = [&](int k) -> const Frame& {
        return (k >= t && k < gop_end) ? new_decoded[k - t] : decoded_[k];
      };
      for (int q = q_first; q <= q_last; ++q) {
        const std::vector<double> pair =
            pair_difference_features(decoded_at(q), decoded_at(q + 1), grid);
        std::copy(pair.begin(), pair.end(),
                  features.begin() + static_cast<std::ptrdiff_t>(q) * block);
      }
      probs = predict_from_features(*model_, features);
    }
    const double candidate_total = total_of(bits, mses, probs, candidate);
    if (candidate_total > total_) return false;

    delta_ = std::move(candidate);
    perturbed_[t] = std::move(new_perturbed);
    for (int k = t; k < gop_end; ++k) {
      decoded_[k] = std::move(new_decoded[k - t]);
      bits_[k] = new_bits[k - t];
      mse_[k] = new_mse[k - t];
    }
    features_ = std::move(features);
    probs_ = std::move(probs);
    total_ = candidate_total;
    return true;
  }

  const FlickerPerturbation& delta() const { return delta_; }
  double total() const { return total_; }

  LossBreakdown breakdown() const { return breakdown_of(bits_, mse_, probs_, delta_); }

  IterationStat stat(int iteration) const {
    const LossBreakdown b = breakdown();
    double total_bits = 0.0, total_mse = 0.0;
    for (double v : bits_) total_bits += v;
    for (double v : mse_) total_mse += v;
    const double frame_count = static_cast<double>(clean_.frame_count());
    return {iteration,
            b.comp,
            b.classification,
            b.thick,
            b.rough,
            b.total,
            total_bits / (frame_count * pixels_),
            psnr_from_mse(total_mse / frame_count),
            use_class() && clean_class_ >= 0 ? probs_.p[clean_class_] : 0.0};
  }

  int prediction() const { return use_class() ? probs_.argmax() : -1; }

 private:
  bool use_comp() const { return mode_ != AttackMode::classification_only; }
  bool use_class() const { return mode_ != AttackMode::compression_only; }

  double total_of(const std::vector<double>& bits, const std::vector<double>& mses,
                  const ClassProbabilities& probs, const FlickerPerturbation& delta) const {
    return breakdown_of(bits, mses, probs, delta).total;
  }

  LossBreakdown breakdown_of(const std::vector<double>& bits, const std::vector<double>& mses,
                             const ClassProbabilities& probs,
                             const FlickerPerturbation& delta) const {
    LossBreakdown b;
    if (use_comp()) {
      double comp = 0.0, gop_sum = 0.0;
      int gop_count = 0;
      for (int t = 0; t < clean_.frame_count(); ++t) {
        if (t % codec_.gop_size == 0) {
          if (t > 0) {
            comp += -gop_sum;
            gop_sum = 0.0;
          }
          ++gop_count;
        }
        gop_sum += bits[t] + lambda_ * mses[t] * pixels_;
      }
      comp += -gop_sum;
      b.comp = comp / gop_count;
    }
    if (use_class()) b.classification = margin_from_probs(probs, clean_class_, target_);
    b.thick = r_thick(delta);
    b.rough = safe_r_rough(delta);
    b.total = b.comp + (use_class() ? beta_ * b.classification : 0.0) +
              zeta_ * (b.thick + b.rough);
    return b;
  }

  const VideoClip& clean_;
  CodecConfig codec_;
  double lambda_;
  AttackMode mode_;
  double beta_;
  double zeta_;
  const ClassifierModel* model_;
  int clean_class_;
  std::optional<int> target_;
  double pixels_;

  FlickerPerturbation delta_;
  std::vector<Frame> perturbed_;
  std::vector<Frame> decoded_;
  std::vector<double> bits_;
  std::vector<double> mse_;
  std::vector<double> features_;
  ClassProbabilities probs_;
  double total_ = 0.0;
};

FlickerPerturbation finite_difference_gradient(const SmoothObjective& objective,
                                               const FlickerPerturbation& at, double h) {
  const int dim = at.frames * at.channels;
  std::vector<double> slots(dim);
  parallel_for(static_cast<std::size_t>(dim), [&](std::size_t e) {
    const double up = objective.probe(static_cast<int>(e), +h);
    const double down = objective.probe(static_cast<int>(e), -h);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("non-finite smooth objective at probe entry " + std::to_string(e));
    slots[e] = (up - down) / (2.0 * h);
  });
  FlickerPerturbation grad = FlickerPerturbation::zeros(at.frames, at.channels);
  grad.values.assign(slots.begin(), slots.end());
  return grad;
}

IterationStat stat_from(int iteration, const HardEval& ev) {
  return {iteration,
          ev.breakdown.comp,
          ev.breakdown.classification,
          ev.breakdown.thick,
          ev.breakdown.rough,
          ev.breakdown.total,
          ev.bpp,
          ev.psnr,
          ev.clean_class_prob};
}

}  // namespace

void AttackConfig::validate() const {
  if (lambda <= 0.0) throw std::invalid_argument("lambda must be > 0");
  if (epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (step_size == 0.0) throw std::invalid_argument("step_size must be nonzero");
  if (fd_step <= 0.0) throw std::invalid_argument("fd_step must be > 0");
  if (zeta < 0.0) throw std::invalid_argument("zeta must be >= 0");
  if (minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
  if (target_class && (*target_class < 0 || *target_class >= kMotionClassCount))
    throw std::invalid_argument("target_class out of range");
}

double comp_loss(const VideoClip& clip, const FlickerPerturbation& delta, double lambda_weight,
                 int gop_index, const CodecConfig& codec, RateMode rate_mode) {
  codec.validate();
  const auto gops = partition_gops(clip.frame_count(), codec.gop_size);
  if (gop_index < 0 || gop_index >= static_cast<int>(gops.size()))
    throw std::invalid_argument("comp_loss: gop index out of range");

  CodecConfig cfg = codec;
  cfg.mode = rate_mode;
  const VideoClip perturbed = apply_flicker(clip, delta, 0);
  const GopView gop = gops[gop_index];
  const double wh = static_cast<double>(clip.width()) * clip.height();

  ReferenceBuffer refs;
  double sum = 0.0;
  for (int t = gop.first_frame; t < gop.first_frame + gop.length; ++t) {
    EncodedFrame encoded = encode_frame(perturbed.frames[t], refs, cfg);
    sum += encoded.stream.total_bits + lambda_weight * mse(clip.frames[t], encoded.decoded) * wh;
    refs.push(std::move(encoded.decoded));
  }
  return -sum;
}

double class_loss(const VideoClip& clean_clip, const FlickerPerturbation& delta,
                  const ClassifierModel& model, const CodecConfig& codec,
                  const std::optional<int>& target_class) {
  if (!model.trained) throw std::runtime_error("class_loss: model is not trained");
  CodecConfig hard = codec;
  hard.mode = RateMode::hard;
  const int clean_class = predict(model, encode_clip(clean_clip, hard, clean_clip).decoded).argmax();

  const VideoClip adversarial = apply_flicker(clean_clip, delta, 0);
  const CodedClip coded = encode_clip(adversarial, codec, clean_clip);
  return margin_from_probs(predict(model, coded.decoded), clean_class, target_class);
}

LossBreakdown total_objective(const VideoClip& clip, const FlickerPerturbation& delta,
                              const AttackConfig& config, const CodecConfig& codec,
                              const ClassifierModel* model) {
  config.validate();
  const bool use_comp = config.mode != AttackMode::classification_only;
  const bool use_class = config.mode != AttackMode::compression_only;
  if (use_class && (model == nullptr || !model->trained))
    throw std::runtime_error("total_objective: this mode requires a trained model");
  if (use_class && config.beta < 0.0)
    throw std::invalid_argument("total_objective: beta must be resolved (>= 0)");

  LossBreakdown b;
  if (use_comp) {
    const auto gops = partition_gops(clip.frame_count(), codec.gop_size);
    double sum = 0.0;
    for (const GopView& g : gops)
      sum += comp_loss(clip, delta, config.lambda, g.index, codec, codec.mode);
    b.comp = sum / static_cast<double>(gops.size());
  }
  if (use_class)
    b.classification = class_loss(clip, delta, *model, codec, config.target_class);
  b.thick = r_thick(delta);
  b.rough = safe_r_rough(delta);
  b.total = b.comp + (use_class ? config.beta * b.classification : 0.0) +
            config.zeta * (b.thick + b.rough);
  return b;
}

FlickerPerturbation estimate_gradient(const std::function<double(const FlickerPerturbation&)>& f,
                                      const FlickerPerturbation& at, double fd_step) {
  if (fd_step <= 0.0) throw std::invalid_argument("estimate_gradient: fd_step must be > 0");
  at.validate();
  const int dim = at.frames * at.channels;
  std::vector<double> slots(dim);
  parallel_for(static_cast<std::size_t>(dim), [&](std::size_t e) {
    FlickerPerturbation up = at;
    up.values[e] += fd_step;
    FlickerPerturbation down = at;
    down.values[e] -= fd_step;
    const double fu = f(up);
    const double fd = f(down);
    if (!std::isfinite(fu) || !std::isfinite(fd)) {
      const int t = static_cast<int>(e) / at.channels;
      const int c = static_cast<int>(e) % at.channels;
      throw std::runtime_error("estimate_gradient: non-finite objective at probe (frame " +
                               std::to_string(t) + ", channel " + std::to_string(c) + ")");
    }
    slots[e] = (fu - fd) / (2.0 * fd_step);
  });
  FlickerPerturbation grad = FlickerPerturbation::zeros(at.frames, at.channels);
  grad.values.assign(slots.begin(), slots.end());
  return grad;
}

AttackReport attack_offline(const VideoClip& clip, const AttackConfig& config,
                            const CodecConfig& codec, const ClassifierModel* model) {
  const auto start_time = std::chrono::steady_clock::now();
  config.validate();
  if (clip.frame_count() < 1) throw std::invalid_argument("attack_offline: empty clip");
  const bool use_class = config.mode != AttackMode::compression_only;
  if (use_class && (model == nullptr || !model->trained))
    throw std::runtime_error("attack_offline: this mode requires a trained model");

  CodecConfig hard = codec;
  hard.lambda = config.lambda;
  hard.mode = RateMode::hard;
  hard.validate();
  CodecConfig smooth = hard;
  smooth.mode = RateMode::smooth;

  const int frame_count = clip.frame_count();
  const int channels = clip.channels();
  const FlickerPerturbation zero = FlickerPerturbation::zeros(frame_count, channels);

  const CodedClip clean_coded = encode_clip(clip, hard, clip);
  int clean_class = -1;
  if (model) clean_class = predict(*model, clean_coded.decoded).argmax();

  // Breakdown of the clean point; beta = 0 leaves the raw parts intact.
  const HardEval clean_eval = evaluate_coded(clip, zero, clean_coded, config.lambda, config.mode,
                                             0.0, config.zeta, model, clean_class,
                                             config.target_class);
  double beta = config.beta;
  if (beta < 0.0) {
    if (!use_class)
      beta = 0.0;
    else if (config.mode == AttackMode::classification_only)
      beta = 1.0;
    else
      beta = std::abs(clean_eval.breakdown.comp) /
             std::max(std::abs(clean_eval.breakdown.classification), 1e-9);
  }
  const double initial_total =
      clean_eval.breakdown.comp + (use_class ? beta * clean_eval.breakdown.classification : 0.0);

  AttackReport report;
  report.seed = config.seed;
  report.resolved_beta = beta;
  report.resolved_step = config.resolved_step();
  report.clean_bpp = clean_coded.bpp;
  report.clean_psnr = clean_coded.psnr_vs;
  if (model) report.clean_prediction = clean_class;
  {
    HardEval initial = clean_eval;
    initial.breakdown.total = initial_total;
    report.initial = stat_from(0, initial);
  }
  report.adv_bpp = clean_coded.bpp;
  report.adv_psnr = clean_coded.psnr_vs;
  if (model) report.adv_prediction = clean_class;

  SmoothObjective objective(clip, smooth, config.lambda, config.mode, beta, model, clean_class,
                            config.target_class, 0);
  FlickerPerturbation delta = zero;
  objective.set_base(delta);

  double step = config.resolved_step();
  double current_total = initial_total;
  IterationStat last_accepted = report.initial;

  for (int iter = 1; iter <= config.iterations; ++iter) {
    FlickerPerturbation grad = finite_difference_gradient(objective, delta, config.fd_step);
    if (config.zeta > 0.0) {
      const FlickerPerturbation reg = safe_regularizer_gradient(delta, config.zeta);
      for (std::size_t i = 0; i < grad.values.size(); ++i) grad.values[i] += reg.values[i];
    }

    FlickerPerturbation candidate = delta;
    for (std::size_t i = 0; i < candidate.values.size(); ++i)
      candidate.values[i] -= step * sign_of(grad.values[i]);
    candidate = project_linf(std::move(candidate), config.epsilon);

    if (candidate.values == delta.values) {
      // Zero effective step (e.g. epsilon = 0 or a flat gradient): the
      // iterate is unchanged and trivially accepted.
      last_accepted.iteration = iter;
      report.trace.push_back(last_accepted);
      continue;
    }

    const VideoClip adversarial = apply_flicker(clip, candidate, 0);
    const CodedClip coded = encode_clip(adversarial, hard, clip);
    const HardEval ev = evaluate_coded(clip, candidate, coded, config.lambda, config.mode, beta,
                                       config.zeta, model, clean_class, config.target_class);
    if (ev.breakdown.total <= current_total) {
      delta = std::move(candidate);
      current_total = ev.breakdown.total;
      objective.set_base(delta);
      last_accepted = stat_from(iter, ev);
      report.trace.push_back(last_accepted);
      report.adv_bpp = ev.bpp;
      report.adv_psnr = ev.psnr;
      if (model) report.adv_prediction = ev.prediction;
    } else {
      step *= 0.5;
      if (step < 1e-7) break;
    }
  }

  // Greedy sign refinement: single-entry flips under the same hard-mode
  // acceptance rule. Repairs equal-sign runs the global signed step cannot
  // resolve (flipping every saturated entry at once leaves the objective
  // unchanged).
  {
    HardIterate iterate(clip, hard, config.lambda, config.mode, beta, model, clean_class,
                        config.target_class);
    iterate.reset(delta);
    int iteration = config.iterations;
    const int dim = delta.frames * delta.channels;
    for (int pass = 0; pass < 2; ++pass) {
      bool improved = false;
      for (int e = 0; e < dim; ++e) {
        if (iterate.try_flip(e)) {
          improved = true;
          last_accepted = iterate.stat(++iteration);
          report.trace.push_back(last_accepted);
        }
      }
      if (!improved) break;
    }
    delta = iterate.delta();
    if (!report.trace.empty()) {
      report.adv_bpp = report.trace.back().bpp;
      report.adv_psnr = report.trace.back().psnr;
      if (model) report.adv_prediction = iterate.prediction();
    }
  }

  report.delta = std::move(delta);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return report;
}

AttackReport attack_universal(const std::vector<VideoClip>& train_set, const AttackConfig& config,
                              const CodecConfig& codec, const ClassifierModel* model) {
  const auto start_time = std::chrono::steady_clock::now();
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("attack_universal: empty train set");
  const bool use_class = config.mode != AttackMode::compression_only;
  const bool use_comp = config.mode != AttackMode::classification_only;
  if (use_class && (model == nullptr || !model->trained))
    throw std::runtime_error("attack_universal: this mode requires a trained model");

  CodecConfig hard = codec;
  hard.lambda = config.lambda;
  hard.mode = RateMode::hard;
  hard.validate();
  CodecConfig smooth = hard;
  smooth.mode = RateMode::smooth;

  const int gop = hard.gop_size;
  const int channels = train_set.front().channels();
  for (const VideoClip& c : train_set)
    if (c.channels() != channels)
      throw std::invalid_argument("attack_universal: channel counts disagree across clips");

  const std::size_t n = train_set.size();
  FlickerPerturbation delta = FlickerPerturbation::zeros(gop, channels);

  // Clean pipeline per clip: metrics, reference class, and the balance terms.
  std::vector<double> clean_bpp(n), clean_psnr(n), comp0(n), class0(n), prob0(n);
  std::vector<int> clean_class(n, -1);
  parallel_for(n, [&](std::size_t i) {
    const CodedClip coded = encode_clip(train_set[i], hard, train_set[i]);
    clean_bpp[i] = coded.bpp;
    clean_psnr[i] = coded.psnr_vs;
    int cls = -1;
    if (model) cls = predict(*model, coded.decoded).argmax();
    clean_class[i] = cls;
    const HardEval ev = evaluate_coded(train_set[i], delta, coded, config.lambda, config.mode, 0.0,
                                       config.zeta, model, cls, config.target_class);
    comp0[i] = ev.breakdown.comp;
    class0[i] = ev.breakdown.classification;
    prob0[i] = ev.clean_class_prob;
  });

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double comp0_mean = mean_of(comp0);
  const double class0_mean = mean_of(class0);

  double beta = config.beta;
  if (beta < 0.0) {
    if (!use_class)
      beta = 0.0;
    else if (config.mode == AttackMode::classification_only)
      beta = 1.0;
    else
      beta = std::abs(comp0_mean) / std::max(std::abs(class0_mean), 1e-9);
  }

  AttackReport report;
  report.seed = config.seed;
  report.resolved_beta = beta;
  report.resolved_step = config.resolved_step();
  report.clean_bpp = mean_of(clean_bpp);
  report.clean_psnr = mean_of(clean_psnr);
  report.initial = {0,
                    comp0_mean,
                    class0_mean,
                    0.0,
                    0.0,
                    comp0_mean + (use_class ? beta * class0_mean : 0.0),
                    report.clean_bpp,
                    report.clean_psnr,
                    mean_of(prob0)};

  SplitMix64 rng(config.seed);
  const int dim = gop * channels;
  const double h = config.fd_step;
  double step = config.resolved_step();

  for (int iter = 1; iter <= config.iterations; ++iter) {
    const int batch = static_cast<int>(std::min<std::size_t>(config.minibatch, n));
    std::vector<std::size_t> members(batch);
    std::vector<int> offsets(batch);
    for (int k = 0; k < batch; ++k) {
      members[k] = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      offsets[k] = static_cast<int>(rng.uniform_int(0, gop - 1));
    }

    std::vector<std::vector<double>> member_grads(batch);
    std::vector<double> member_comp(batch, 0.0), member_class(batch, 0.0);
    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t k) {
      const VideoClip& clip = train_set[members[k]];
      SmoothObjective objective(clip, smooth, config.lambda, config.mode, beta, model,
                                clean_class[members[k]], config.target_class, offsets[k]);
      objective.set_base(delta);
      member_comp[k] = objective.base_comp();
      member_class[k] = objective.base_class();
      std::vector<double> g(dim);
      for (int e = 0; e < dim; ++e) {
        const double up = objective.probe(e, +h);
        const double down = objective.probe(e, -h);
        if (!std::isfinite(up) || !std::isfinite(down))
          throw std::runtime_error("attack_universal: non-finite objective at probe entry " +
                                   std::to_string(e));
        g[e] = (up - down) / (2.0 * h);
      }
      member_grads[k] = std::move(g);
    });

    FlickerPerturbation grad = FlickerPerturbation::zeros(gop, channels);
    for (int k = 0; k < batch; ++k)
      for (int e = 0; e < dim; ++e) grad.values[e] += member_grads[k][e] / batch;
    if (config.zeta > 0.0) {
      const FlickerPerturbation reg = safe_regularizer_gradient(delta, config.zeta);
      for (int e = 0; e < dim; ++e) grad.values[e] += reg.values[e];
    }

    const double thick = r_thick(delta);
    const double rough = safe_r_rough(delta);
    const double batch_comp = mean_of(member_comp);
    const double batch_class = mean_of(member_class);
    report.trace.push_back({iter, batch_comp, batch_class, thick, rough,
                            batch_comp + (use_class ? beta * batch_class : 0.0) +
                                config.zeta * (thick + rough),
                            0.0, 0.0, 0.0});

    for (int e = 0; e < dim; ++e) delta.values[e] -= step * sign_of(grad.values[e]);
    delta = project_linf(std::move(delta), config.epsilon);
  }

  // Greedy sign refinement on a fixed train-subset oracle (same single-entry
  // flip repair as the offline attack; a full-set evaluation per flip would
  // be disproportionate, and the subset keeps the pass deterministic).
  if (use_comp) {
    const std::size_t polish_count = std::min<std::size_t>(8, n);
    auto subset_total = [&](const FlickerPerturbation& d) {
      std::vector<double> totals(polish_count);
      parallel_for(polish_count, [&](std::size_t i) {
        const CodedClip coded = encode_clip(apply_flicker(train_set[i], d, 0), hard, train_set[i]);
        totals[i] = evaluate_coded(train_set[i], d, coded, config.lambda, config.mode, beta,
                                   config.zeta, model, clean_class[i], config.target_class)
                        .breakdown.total;
      });
      return mean_of(totals);
    };
    double current = subset_total(delta);
    for (int pass = 0; pass < 2; ++pass) {
      bool improved = false;
      for (int e = 0; e < dim; ++e) {
        if (delta.values[e] == 0.0) continue;
        FlickerPerturbation candidate = delta;
        candidate.values[e] = -candidate.values[e];
        const double candidate_total = subset_total(candidate);
        if (candidate_total <= current) {
          delta = std::move(candidate);
          current = candidate_total;
          improved = true;
        }
      }
      if (!improved) break;
    }
  }

  // Final hard-mode metrics: train-set means at offset 0.
  std::vector<double> adv_bpp(n), adv_psnr(n);
  parallel_for(n, [&](std::size_t i) {
    const VideoClip adversarial = apply_flicker(train_set[i], delta, 0);
    const CodedClip coded = encode_clip(adversarial, hard, train_set[i]);
    adv_bpp[i] = coded.bpp;
    adv_psnr[i] = coded.psnr_vs;
  });
  report.adv_bpp = mean_of(adv_bpp);
  report.adv_psnr = mean_of(adv_psnr);
  report.delta = std::move(delta);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return report;
}

namespace {
nlohmann::json stat_json(const IterationStat& s) {
  return {{"iteration", s.iteration}, {"comp", s.comp},   {"class", s.classification},
          {"thick", s.thick},         {"rough", s.rough}, {"total", s.total},
          {"bpp", s.bpp},             {"psnr", s.psnr},   {"class_prob", s.class_prob}};
}
}  // namespace

std::string attack_report_json(const AttackReport& report) {
  nlohmann::json doc;
  nlohmann::json values = nlohmann::json::array();
  for (int t = 0; t < report.delta.frames; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < report.delta.channels; ++c) row.push_back(report.delta.at(t, c));
    values.push_back(std::move(row));
  }
  doc["delta"] = {{"T", report.delta.frames}, {"C", report.delta.channels}, {"values", values}};
  doc["initial"] = stat_json(report.initial);
  nlohmann::json trace = nlohmann::json::array();
  for (const IterationStat& s : report.trace) trace.push_back(stat_json(s));
  doc["trace"] = std::move(trace);
  doc["clean"] = {{"bpp", report.clean_bpp}, {"psnr", report.clean_psnr}};
  doc["adversarial"] = {{"bpp", report.adv_bpp}, {"psnr", report.adv_psnr}};
  if (report.clean_prediction) doc["clean_prediction"] = *report.clean_prediction;
  if (report.adv_prediction) doc["adv_prediction"] = *report.adv_prediction;
  doc["resolved_beta"] = report.resolved_beta;
  doc["resolved_step"] = report.resolved_step;
  doc["wall_seconds"] = report.wall_seconds;
  doc["seed"] = report.seed;
  return doc.dump(2);
}

void write_trace_csv(const AttackReport& report, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace csv: " + path.string());
  out << "iteration,comp,class,thick,rough,total\n";
  auto row = [&](const IterationStat& s) {
    out << s.iteration << ',' << format_number(s.comp) << ',' << format_number(s.classification)
        << ',' << format_number(s.thick) << ',' << format_number(s.rough) << ','
        << format_number(s.total) << '\n';
  };
  row(report.initial);
  for (const IterationStat& s : report.trace) row(s);
}

}  // namespace flicklab
