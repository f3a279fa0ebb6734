#include "flicklab/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "flicklab/parallel.hpp"
#include "flicklab/rng.hpp"
#include "json.hpp"
#include "texture.hpp"

namespace flicklab {

namespace {

using detail::CosineTexture;

[[noreturn]] void fail(const std::string& message) { throw std::runtime_error(message); }

struct ObjectTrack {
  int x0 = 0, y0 = 0;  // top-left at t = 0
  int dx = 0, dy = 0;  // per-frame step
};

ObjectTrack track_for_class(int label, const SyntheticDatasetConfig& cfg) {
  const int span = cfg.speed * (cfg.frames - 1);
  const int margin_x = cfg.width - cfg.object_size - span;
  const int margin_y = cfg.height - cfg.object_size - span;
  const int center_x = (cfg.width - cfg.object_size) / 2;
  const int center_y = (cfg.height - cfg.object_size) / 2;
  ObjectTrack t;
  switch (label) {
    case 0:  // left: x strictly decreasing
      t = {margin_x / 2 + span, center_y, -cfg.speed, 0};
      break;
    case 1:  // right
      t = {margin_x / 2, center_y, cfg.speed, 0};
      break;
    case 2:  // up
      t = {center_x, margin_y / 2 + span, 0, -cfg.speed};
      break;
    default:  // down
      t = {center_x, margin_y / 2, 0, cfg.speed};
      break;
  }
  return t;
}

}  // namespace

void SyntheticDatasetConfig::validate() const {
  if (clips_per_class < 1) throw std::invalid_argument("clips_per_class must be >= 1");
  if (width < 8 || height < 8) throw std::invalid_argument("frame too small");
  if (frames < 2) throw std::invalid_argument("need at least 2 frames");
  if (object_size < 1) throw std::invalid_argument("object_size must be >= 1");
  if (speed < 1) throw std::invalid_argument("speed must be >= 1");
  if (noise_level < 0.0) throw std::invalid_argument("noise_level must be >= 0");
  const int span = speed * (frames - 1);
  if (object_size + span > width || object_size + span > height)
    throw std::invalid_argument("object trajectory does not fit inside the frame");
}

std::vector<LabeledClip> generate_dataset(const SyntheticDatasetConfig& config) {
  config.validate();
  std::vector<LabeledClip> clips;
  clips.reserve(static_cast<std::size_t>(config.clips_per_class) * kMotionClassCount);

  for (int label = 0; label < kMotionClassCount; ++label) {
    for (int k = 0; k < config.clips_per_class; ++k) {
      SplitMix64 rng(mix_seed(config.seed, {static_cast<std::uint64_t>(label),
                                            static_cast<std::uint64_t>(k)}));
      const CosineTexture background = CosineTexture::random(rng, 0.40, 0.60, 0.002, 0.006, 3);
      CosineTexture object = CosineTexture::random(rng, 0.0, 0.0, 0.003, 0.008, 3);
      // The object is set apart by a per-clip intensity offset (same sign on
      // every channel), so the motion signal lives in smooth block means
      // rather than in high-frequency detail.
      const double contrast = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.10, 0.22);
      for (int c = 0; c < 3; ++c)
        object.base[c] = std::clamp(background.base[c] + contrast, 0.15, 0.85);
      const ObjectTrack track = track_for_class(label, config);

      Frame base_frame = Frame::constant(config.width, config.height, 3, 0.0);
      for (int y = 0; y < config.height; ++y)
        for (int x = 0; x < config.width; ++x)
          for (int c = 0; c < 3; ++c)
            base_frame.at(y, x, c) = background.sample(static_cast<double>(x) / config.width,
                                                       static_cast<double>(y) / config.height, c);

      LabeledClip item;
      item.label = label;
      item.clip.fps = config.fps;
      item.clip.label = label;
      char name[32];
      std::snprintf(name, sizeof(name), "clip_%d_%03d", label, k);
      item.name = name;

      // Soft object boundary: a linear ramp keeps the edge energy in smooth
      // block means instead of high-frequency transform coefficients.
      const int ramp = std::min(4, config.object_size / 4 + 1);
      const auto edge_alpha = [&](int i) {
        const int inside = std::min(i + 1, config.object_size - i);
        return std::min(1.0, static_cast<double>(inside) / (ramp + 1));
      };

      for (int t = 0; t < config.frames; ++t) {
        Frame frame = base_frame;
        const int ox = track.x0 + track.dx * t;
        const int oy = track.y0 + track.dy * t;
        for (int y = 0; y < config.object_size; ++y)
          for (int x = 0; x < config.object_size; ++x) {
            const double alpha = std::min(edge_alpha(x), edge_alpha(y));
            for (int c = 0; c < 3; ++c) {
              const double obj = object.sample(static_cast<double>(x) / config.object_size,
                                               static_cast<double>(y) / config.object_size, c);
              double& px = frame.at(oy + y, ox + x, c);
              px += alpha * (obj - px);
            }
          }
        if (config.noise_level > 0.0) {
          for (double& v : frame.samples)
            v += rng.uniform(-config.noise_level, config.noise_level);
        }
        for (double& v : frame.samples) v = std::clamp(v, 0.0, 1.0);
        item.clip.frames.push_back(std::move(frame));
      }
      clips.push_back(std::move(item));
    }
  }
  return clips;
}

void write_dataset(const std::vector<LabeledClip>& clips, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  nlohmann::json list = nlohmann::json::array();
  for (const LabeledClip& item : clips) {
    const std::string manifest = item.name + "/manifest.json";
    VideoClip clip = item.clip;
    clip.label = item.label;
    save_clip(clip, dir / manifest);
    list.push_back(manifest);
  }
  index["clips"] = std::move(list);
  index["classes"] = kMotionClassCount;
  std::ofstream out(dir / "dataset.json");
  if (!out) fail("cannot write dataset index in " + dir.string());
  out << index.dump(2) << "\n";
}

std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) fail("cannot open dataset index: " + (dir / "dataset.json").string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    fail("malformed dataset index: " + std::string(e.what()));
  }

  std::vector<LabeledClip> clips;
  for (const auto& entry : index.at("clips")) {
    const std::filesystem::path manifest = dir / entry.get<std::string>();
    LabeledClip item;
    item.clip = load_clip(manifest);
    if (!item.clip.label) fail("dataset clip has no label: " + manifest.string());
    item.label = *item.clip.label;
    item.name = manifest.parent_path().filename().string();
    clips.push_back(std::move(item));
  }
  if (clips.empty()) fail("dataset is empty: " + dir.string());
  return clips;
}

std::vector<double> pair_difference_features(const Frame& a, const Frame& b, int grid) {
  if (!a.same_shape(b)) throw std::invalid_argument("pair features: frame shapes disagree");
  std::vector<double> cell_sum(static_cast<std::size_t>(grid) * grid, 0.0);
  std::vector<int> cell_count(cell_sum.size(), 0);
  const int channels = a.channels;
  for (int y = 0; y < a.height; ++y) {
    const int gy = y * grid / a.height;
    for (int x = 0; x < a.width; ++x) {
      const int gx = x * grid / a.width;
      double diff = 0.0;
      for (int c = 0; c < channels; ++c) diff += b.at(y, x, c) - a.at(y, x, c);
      cell_sum[static_cast<std::size_t>(gy) * grid + gx] += diff / channels;
      ++cell_count[static_cast<std::size_t>(gy) * grid + gx];
    }
  }
  for (std::size_t i = 0; i < cell_sum.size(); ++i) cell_sum[i] /= cell_count[i];
  return cell_sum;
}

std::vector<double> extract_features(const VideoClip& clip, const FeatureSpec& spec) {
  if (clip.frame_count() < 2) throw std::invalid_argument("extract_features needs >= 2 frames");
  std::vector<double> features;
  features.reserve(static_cast<std::size_t>(clip.frame_count() - 1) * spec.grid * spec.grid);
  for (int t = 0; t + 1 < clip.frame_count(); ++t) {
    const std::vector<double> block =
        pair_difference_features(clip.frames[t], clip.frames[t + 1], spec.grid);
    features.insert(features.end(), block.begin(), block.end());
  }
  return features;
}

int ClassProbabilities::argmax() const {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

namespace {

ClassProbabilities softmax(const std::vector<double>& scores) {
  ClassProbabilities out;
  const double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  out.p.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.p[i] = std::exp(scores[i] - m);
    sum += out.p[i];
  }
  for (double& v : out.p) v /= sum;
  return out;
}

std::vector<double> scores_of(const ClassifierModel& model, const std::vector<double>& features) {
  std::vector<double> scores(model.classes);
  for (int k = 0; k < model.classes; ++k) {
    double s = model.bias[k];
    const double* row = model.weights.data() + static_cast<std::size_t>(k) * features.size();
    for (std::size_t i = 0; i < features.size(); ++i) s += row[i] * features[i];
    scores[k] = s;
  }
  return scores;
}

double cross_entropy(const ClassifierModel& model, const std::vector<std::vector<double>>& features,
                     const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const ClassProbabilities probs = softmax(scores_of(model, features[i]));
    loss += -std::log(std::max(probs.p[labels[i]], 1e-300));
  }
  return loss / static_cast<double>(features.size());
}

}  // namespace

ClassifierModel train_classifier(const std::vector<LabeledClip>& dataset, const FeatureSpec& spec,
                                 const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train_classifier: empty dataset");
  std::set<int> distinct;
  for (const LabeledClip& item : dataset) distinct.insert(item.label);
  if (distinct.size() < 2)
    throw std::invalid_argument("train_classifier: dataset has fewer than 2 classes");

  ClassifierModel model;
  model.spec = spec;
  model.spec.frames = dataset.front().clip.frame_count();
  model.classes = kMotionClassCount;
  model.seed = config.seed;
  const int dim = model.feature_dim();
  model.weights.assign(static_cast<std::size_t>(model.classes) * dim, 0.0);
  model.bias.assign(model.classes, 0.0);

  std::vector<std::vector<double>> features(dataset.size());
  std::vector<int> labels(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    features[i] = extract_features(dataset[i].clip, model.spec);
    labels[i] = dataset[i].label;
  });
  for (const auto& f : features)
    if (static_cast<int>(f.size()) != dim) fail("train_classifier: clip shape mismatch");

  const auto n = static_cast<double>(dataset.size());
  double lr = config.learning_rate;
  double current_loss = cross_entropy(model, features, labels);
  std::vector<double> grad_w(model.weights.size());
  std::vector<double> grad_b(model.bias.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    for (std::size_t i = 0; i < features.size(); ++i) {
      const ClassProbabilities probs = softmax(scores_of(model, features[i]));
      for (int k = 0; k < model.classes; ++k) {
        const double delta = probs.p[k] - (k == labels[i] ? 1.0 : 0.0);
        grad_b[k] += delta / n;
        double* row = grad_w.data() + static_cast<std::size_t>(k) * dim;
        const double* f = features[i].data();
        for (int d = 0; d < dim; ++d) row[d] += delta * f[d] / n;
      }
    }

    // Step halving keeps the epoch-loss trace non-increasing.
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      ClassifierModel candidate = model;
      for (std::size_t i = 0; i < candidate.weights.size(); ++i)
        candidate.weights[i] -= lr * grad_w[i];
      for (std::size_t i = 0; i < candidate.bias.size(); ++i)
        candidate.bias[i] -= lr * grad_b[i];
      const double candidate_loss = cross_entropy(candidate, features, labels);
      if (candidate_loss <= current_loss) {
        model.weights = std::move(candidate.weights);
        model.bias = std::move(candidate.bias);
        current_loss = candidate_loss;
        accepted = true;
      } else {
        lr *= 0.5;
      }
    }
    model.loss_trace.push_back(current_loss);
    model.epochs_run = epoch + 1;
    if (!accepted) break;
  }

  model.final_learning_rate = lr;
  model.final_loss = current_loss;
  model.trained = true;
  return model;
}

ClassProbabilities predict(const ClassifierModel& model, const VideoClip& clip) {
  if (!model.trained) fail("predict: model is not trained");
  return predict_from_features(model, extract_features(clip, model.spec));
}

ClassProbabilities predict_from_features(const ClassifierModel& model,
                                         const std::vector<double>& features) {
  if (!model.trained) fail("predict: model is not trained");
  if (static_cast<int>(features.size()) != model.feature_dim())
    throw std::invalid_argument("predict: feature length does not match the model");
  return softmax(scores_of(model, features));
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["grid"] = model.spec.grid;
  doc["frames"] = model.spec.frames;
  doc["classes"] = model.classes;
  doc["weights"] = model.weights;
  doc["bias"] = model.bias;
  doc["meta"] = {{"epochs_run", model.epochs_run},
                 {"final_learning_rate", model.final_learning_rate},
                 {"final_loss", model.final_loss},
                 {"seed", model.seed}};
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail("cannot write model file: " + path.string());
  out << doc.dump(2) << "\n";
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open model file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail("malformed model file " + path.string() + ": " + e.what());
  }
  ClassifierModel model;
  model.spec.grid = doc.at("grid").get<int>();
  model.spec.frames = doc.at("frames").get<int>();
  model.classes = doc.at("classes").get<int>();
  model.weights = doc.at("weights").get<std::vector<double>>();
  model.bias = doc.at("bias").get<std::vector<double>>();
  if (doc.contains("meta")) {
    model.epochs_run = doc["meta"].value("epochs_run", 0);
    model.final_learning_rate = doc["meta"].value("final_learning_rate", 0.0);
    model.final_loss = doc["meta"].value("final_loss", 0.0);
    model.seed = doc["meta"].value("seed", 0ULL);
  }
  if (static_cast<int>(model.bias.size()) != model.classes ||
      static_cast<int>(model.weights.size()) != model.classes * model.feature_dim())
    fail("model file dimensions are inconsistent: " + path.string());
  model.trained = true;
  return model;
}

AsrResult evaluate_asr(
    const ClassifierModel& model, const std::vector<LabeledClip>& test_set,
    const std::function<FlickerPerturbation(const LabeledClip&, std::size_t)>& attack_source,
    const std::optional<std::function<int(const LabeledClip&)>>& target_of_clip,
    const CodecConfig& codec, AsrDenominator denominator) {
  if (!model.trained) fail("evaluate_asr: model is not trained");
  if (test_set.empty()) throw std::invalid_argument("evaluate_asr: empty test set");

  struct PerClip {
    bool clean_correct = false;
    bool counted = false;
    bool success = false;
  };
  std::vector<PerClip> results(test_set.size());

  parallel_for(test_set.size(), [&](std::size_t i) {
    const LabeledClip& item = test_set[i];
    const CodedClip clean_coded = encode_clip(item.clip, codec, item.clip);
    const int clean_pred = predict(model, clean_coded.decoded).argmax();
    PerClip r;
    r.clean_correct = clean_pred == item.label;
    r.counted = denominator == AsrDenominator::all_clips || r.clean_correct;
    if (r.counted) {
      const FlickerPerturbation delta = attack_source(item, i);
      const VideoClip adversarial = apply_flicker(item.clip, delta, 0);
      const CodedClip adv_coded = encode_clip(adversarial, codec, item.clip);
      const int adv_pred = predict(model, adv_coded.decoded).argmax();
      r.success = target_of_clip ? adv_pred == (*target_of_clip)(item) : adv_pred != item.label;
    }
    results[i] = r;
  });

  AsrResult out;
  out.total = static_cast<int>(test_set.size());
  for (const PerClip& r : results) {
    out.clean_accuracy += r.clean_correct ? 1.0 : 0.0;
    if (r.counted) {
      ++out.denominator;
      if (r.success) ++out.successes;
    }
  }
  out.clean_accuracy /= out.total;
  if (out.denominator == 0) fail("evaluate_asr: no clips in the ASR denominator");
  out.asr = static_cast<double>(out.successes) / out.denominator;
  return out;
}

}  // namespace flicklab
