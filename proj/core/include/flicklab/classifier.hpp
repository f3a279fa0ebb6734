#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flicklab/codec.hpp"
#include "flicklab/flicker.hpp"
#include "flicklab/video.hpp"

namespace flicklab {

// Motion directions of the synthetic task: 0=left 1=right 2=up 3=down.
inline constexpr int kMotionClassCount = 4;

struct SyntheticDatasetConfig {
  int clips_per_class = 100;
  int width = 64;
  int height = 64;
  int frames = 16;
  int object_size = 16;
  int speed = 2;  // pixels per frame
  double noise_level = 0.008;
  double fps = 30.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct LabeledClip {
  VideoClip clip;
  int label = 0;
  std::string name;
};

// A textured rectangle translating in its class direction over a static
// textured background, plus i.i.d. pixel noise. Deterministic given seed.
std::vector<LabeledClip> generate_dataset(const SyntheticDatasetConfig& config);

// On-disk layout: <dir>/dataset.json {"clips": [manifest paths]} with one
// clip per subdirectory in the video manifest + PPM format (label in the
// manifest).
void write_dataset(const std::vector<LabeledClip>& clips, const std::filesystem::path& dir);
std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir);

struct FeatureSpec {
  int grid = 8;    // D: each temporal-difference map is box-downsampled to D x D
  int frames = 16; // temporal length the model was built for
};

// Signed channel-mean difference of consecutive frames, box-downsampled to
// grid x grid; concatenated over the frames-1 pairs.
std::vector<double> extract_features(const VideoClip& clip, const FeatureSpec& spec);

// One pair's grid x grid block of the feature vector above.
std::vector<double> pair_difference_features(const Frame& a, const Frame& b, int grid);

struct ClassProbabilities {
  std::vector<double> p;
  int argmax() const;
};

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 2.0;
  std::uint64_t seed = 0;
};

// Multinomial logistic regression over the temporal-difference features,
// trained by full-batch gradient descent with step halving whenever a step
// would increase the loss (epoch losses are therefore non-increasing).
struct ClassifierModel {
  FeatureSpec spec;
  int classes = kMotionClassCount;
  std::vector<double> weights;  // classes x feature_dim, row-major
  std::vector<double> bias;     // classes
  bool trained = false;

  // training metadata
  int epochs_run = 0;
  double final_learning_rate = 0.0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;

  int feature_dim() const { return spec.grid * spec.grid * (spec.frames - 1); }
};

ClassifierModel train_classifier(const std::vector<LabeledClip>& dataset, const FeatureSpec& spec,
                                 const TrainConfig& config);

ClassProbabilities predict(const ClassifierModel& model, const VideoClip& clip);
ClassProbabilities predict_from_features(const ClassifierModel& model,
                                         const std::vector<double>& features);

void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

// --- attack success rate ---

enum class AsrDenominator { correctly_classified, all_clips };

struct AsrResult {
  double asr = 0.0;
  double clean_accuracy = 0.0;
  int denominator = 0;
  int successes = 0;
  int total = 0;
};

// The pipeline of record: every prediction (clean and adversarial) is made
// on the codec's decoded output. attack_source maps (clip, index) to the
// perturbation to apply; target_of_clip, when given, switches to targeted
// counting (success = predicted class equals the target).
AsrResult evaluate_asr(
    const ClassifierModel& model, const std::vector<LabeledClip>& test_set,
    const std::function<FlickerPerturbation(const LabeledClip&, std::size_t)>& attack_source,
    const std::optional<std::function<int(const LabeledClip&)>>& target_of_clip,
    const CodecConfig& codec, AsrDenominator denominator = AsrDenominator::correctly_classified);

}  // namespace flicklab
