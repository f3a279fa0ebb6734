#include "flicklab/experiments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "flicklab/csv.hpp"
#include "flicklab/parallel.hpp"
#include "flicklab/rng.hpp"
#include "flicklab/version.hpp"
#include "json.hpp"
#include "texture.hpp"

namespace flicklab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) { throw std::runtime_error(message); }

// Seed-derivation tags; values are arbitrary but frozen (changing them
// changes every shipped result).
enum SeedTag : std::uint64_t {
  kTagDataset = 1,
  kTagAttack = 2,
  kTagNoise = 3,
  kTagUniversal = 4,
  kTagSplit = 5,
  kTagOnset = 6,
  kTagChannel = 7,
  kTagPan = 8,
  kTagTrain = 9,
};

std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

const char* kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::rd_sweep: return "rd-sweep";
    case ExperimentKind::asr_table: return "asr-table";
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::onset_trace: return "onset-trace";
    case ExperimentKind::transfer: return "transfer";
  }
  return "unknown";
}

const char* mode_name(AttackMode mode) {
  switch (mode) {
    case AttackMode::compression_only: return "compression-only";
    case AttackMode::joint: return "joint";
    case AttackMode::classification_only: return "classification-only";
  }
  return "unknown";
}

json spec_to_json(const ExperimentSpec& spec) {
  json doc;
  doc["kind"] = kind_name(spec.kind);
  doc["dataset_dir"] = spec.dataset_dir.string();
  doc["output_dir"] = spec.output_dir.string();
  doc["seed"] = spec.seed;
  doc["gop_size"] = spec.gop_size;
  doc["block_size"] = spec.block_size;
  doc["search_radius"] = spec.search_radius;
  doc["lambdas"] = spec.lambdas;
  doc["epsilons"] = spec.epsilons;
  doc["epsilon"] = spec.epsilon;
  doc["attack_mode"] = mode_name(spec.attack_mode);
  doc["attack_iterations"] = spec.attack_iterations;
  doc["step_size"] = spec.step_size;
  doc["fd_step"] = spec.fd_step;
  doc["zeta"] = spec.zeta;
  doc["beta"] = spec.beta;
  doc["universal_steps"] = spec.universal_steps;
  doc["minibatch"] = spec.minibatch;
  doc["holdout_clips"] = spec.holdout_clips;
  doc["pipeline_lambda"] = spec.pipeline_lambda;
  doc["victim_grid"] = spec.victim_grid;
  doc["surrogate_grid"] = spec.surrogate_grid;
  doc["train_epochs"] = spec.train_epochs;
  doc["train_learning_rate"] = spec.train_learning_rate;
  doc["onset_frame"] = spec.onset_frame;
  doc["onset_clip_frames"] = spec.onset_clip_frames;
  doc["onset_pan_speed"] = spec.onset_pan_speed;
  if (spec.clip_path) doc["clip_path"] = spec.clip_path->string();
  if (spec.delta_path) doc["delta_path"] = spec.delta_path->string();
  if (spec.model_path) doc["model_path"] = spec.model_path->string();
  if (spec.channel) {
    const ChannelConfig& ch = *spec.channel;
    doc["channel"] = {{"levels_per_channel", ch.levels_per_channel},
                      {"gain", ch.gain},
                      {"baseline_level", ch.baseline_level},
                      {"max_updates_per_second", ch.max_updates_per_second},
                      {"camera_fps", ch.camera_fps},
                      {"latency_jitter_frames", ch.latency_jitter_frames},
                      {"seed", ch.seed}};
  }
  return doc;
}

void write_sidecar(const std::filesystem::path& csv_path, const ExperimentSpec& spec) {
  json doc;
  doc["library_version"] = kVersion;
  doc["spec"] = spec_to_json(spec);
  std::ofstream out(csv_path.string() + ".meta.json");
  if (!out) fail("cannot write sidecar for " + csv_path.string());
  out << doc.dump(2) << "\n";
}

std::filesystem::path prepare_output(const ExperimentSpec& spec) {
  if (spec.output_dir.empty()) throw std::invalid_argument("output_dir is required");
  std::filesystem::create_directories(spec.output_dir);
  return spec.output_dir;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// Hard-mode compression-only total objective of delta applied at `offset`:
// GOP-averaged -(bits + lambda*MSE*W*H) plus the regularizers.
double hard_compression_objective(const VideoClip& clip, const FlickerPerturbation& delta,
                                  int offset, double lambda, double zeta,
                                  const CodecConfig& hard_codec) {
  const VideoClip adversarial = apply_flicker(clip, delta, offset);
  const CodedClip coded = encode_clip(adversarial, hard_codec, clip);
  const auto gops = partition_gops(clip.frame_count(), hard_codec.gop_size);
  const double wh = static_cast<double>(clip.width()) * clip.height();
  double comp = 0.0;
  for (const GopView& g : gops) {
    double gop_sum = 0.0;
    for (int t = g.first_frame; t < g.first_frame + g.length; ++t)
      gop_sum += coded.frames[t].total_bits +
                 lambda * mse(clip.frames[t], coded.decoded.frames[t]) * wh;
    comp += -gop_sum;
  }
  comp /= static_cast<double>(gops.size());
  const double rough = delta.frames >= 2 ? r_rough(delta) : 0.0;
  return comp + zeta * (r_thick(delta) + rough);
}

}  // namespace

CodecConfig codec_for(const ExperimentSpec& spec, double lambda) {
  CodecConfig cfg;
  cfg.gop_size = spec.gop_size;
  cfg.lambda = lambda;
  cfg.block_size = spec.block_size;
  cfg.search_radius = spec.search_radius;
  cfg.mode = RateMode::hard;
  cfg.validate();
  return cfg;
}

SyntheticDatasetConfig suite_dataset_config(std::uint64_t seed) {
  SyntheticDatasetConfig cfg;
  cfg.clips_per_class = 10;
  cfg.width = 64;
  cfg.height = 64;
  cfg.frames = 30;
  cfg.object_size = 16;
  cfg.speed = 1;
  cfg.noise_level = 0.008;
  cfg.seed = mix_seed(seed, {kTagDataset});
  return cfg;
}

SyntheticDatasetConfig classifier_dataset_config(std::uint64_t seed) {
  SyntheticDatasetConfig cfg;
  cfg.clips_per_class = 100;
  cfg.width = 64;
  cfg.height = 64;
  cfg.frames = 16;
  cfg.object_size = 16;
  cfg.speed = 2;
  cfg.noise_level = 0.008;
  cfg.seed = mix_seed(seed, {kTagDataset, 2});
  return cfg;
}

VideoClip make_pan_clip(int width, int height, int frames, int speed, std::uint64_t seed) {
  if (width < 8 || height < 8 || frames < 1) throw std::invalid_argument("pan clip too small");
  SplitMix64 rng(mix_seed(seed, {kTagPan}));
  const detail::CosineTexture texture =
      detail::CosineTexture::random(rng, 0.40, 0.60, 0.003, 0.008, 3);
  VideoClip clip;
  for (int t = 0; t < frames; ++t) {
    Frame frame = Frame::constant(width, height, 3, 0.0);
    const double shift = static_cast<double>(t * speed) / width;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c)
          frame.at(y, x, c) = std::clamp(
              texture.sample(static_cast<double>(x) / width + shift,
                             static_cast<double>(y) / height, c) +
                  rng.uniform(-0.004, 0.004),
              0.0, 1.0);
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

RdSweepResult run_rd_sweep(const ExperimentSpec& spec) {
  const auto out_dir = prepare_output(spec);
  if (spec.lambdas.empty()) throw std::invalid_argument("rd-sweep needs a nonempty lambda list");
  for (double e : spec.epsilons)
    if (e < 0.0) throw std::invalid_argument("epsilon list entries must be >= 0");

  const std::vector<LabeledClip> dataset = load_dataset(spec.dataset_dir);
  const std::size_t n = dataset.size();

  std::vector<double> lambdas = spec.lambdas;
  std::sort(lambdas.begin(), lambdas.end());
  std::vector<double> epsilons = spec.epsilons;
  std::sort(epsilons.begin(), epsilons.end());

  RdSweepResult result;
  for (double lambda : lambdas) {
    const CodecConfig codec = codec_for(spec, lambda);
    for (double epsilon : epsilons) {
      std::vector<double> bpp_clean(n), psnr_clean(n), bpp_adv(n), psnr_adv(n), bpp_noise(n),
          psnr_noise(n);
      parallel_for(n, [&](std::size_t i) {
        const VideoClip& clip = dataset[i].clip;
        AttackConfig attack;
        attack.lambda = lambda;
        attack.epsilon = epsilon;
        attack.iterations = spec.attack_iterations;
        attack.step_size = spec.step_size;
        attack.fd_step = spec.fd_step;
        attack.zeta = spec.zeta;
        attack.beta = spec.beta;
        attack.mode = AttackMode::compression_only;
        attack.seed = mix_seed(spec.seed, {kTagAttack, bits_of(lambda), bits_of(epsilon), i});
        const AttackReport report = attack_offline(clip, attack, codec);
        bpp_clean[i] = report.clean_bpp;
        psnr_clean[i] = report.clean_psnr;
        bpp_adv[i] = report.adv_bpp;
        psnr_adv[i] = report.adv_psnr;

        const FlickerPerturbation noise = sample_uniform_flicker(
            clip.frame_count(), clip.channels(), epsilon,
            mix_seed(spec.seed, {kTagNoise, bits_of(lambda), bits_of(epsilon), i}));
        const CodedClip noise_coded = encode_clip(apply_flicker(clip, noise, 0), codec, clip);
        bpp_noise[i] = noise_coded.bpp;
        psnr_noise[i] = noise_coded.psnr_vs;
      });
      result.rows.push_back({lambda, epsilon, mean_of(bpp_clean), mean_of(psnr_clean),
                             mean_of(bpp_adv), mean_of(psnr_adv), mean_of(bpp_noise),
                             mean_of(psnr_noise)});
    }
  }

  result.csv_path = out_dir / "rd_sweep.csv";
  std::ofstream out(result.csv_path);
  if (!out) fail("cannot write " + result.csv_path.string());
  out << "lambda,epsilon,bpp_clean,psnr_clean,bpp_adv,psnr_adv,bpp_noise,psnr_noise\n";
  for (const RdPoint& r : result.rows) {
    out << format_number(r.lambda) << ',' << format_number(r.epsilon) << ','
        << format_number(r.bpp_clean) << ',' << format_number(r.psnr_clean) << ','
        << format_number(r.bpp_adv) << ',' << format_number(r.psnr_adv) << ','
        << format_number(r.bpp_noise) << ',' << format_number(r.psnr_noise) << '\n';
  }
  out.close();
  write_sidecar(result.csv_path, spec);
  return result;
}

AsrTableResult run_asr_table(const ExperimentSpec& spec) {
  const auto out_dir = prepare_output(spec);
  const std::vector<LabeledClip> dataset = load_dataset(spec.dataset_dir);
  const std::size_t n = dataset.size();
  if (n < 10) throw std::invalid_argument("asr-table needs at least 10 clips");

  // 8:1:1 split, deterministic in the seed.
  const std::vector<std::size_t> order = shuffled_indices(n, mix_seed(spec.seed, {kTagSplit}));
  const std::size_t train_count = n * 8 / 10;
  const std::size_t val_count = n / 10;
  std::vector<LabeledClip> train_split, test_split;
  for (std::size_t i = 0; i < train_count; ++i) train_split.push_back(dataset[order[i]]);
  for (std::size_t i = train_count + val_count; i < n; ++i)
    test_split.push_back(dataset[order[i]]);
  if (test_split.empty()) throw std::invalid_argument("asr-table: empty test split");

  const TrainConfig victim_train{spec.train_epochs, spec.train_learning_rate,
                                 mix_seed(spec.seed, {kTagTrain, 1})};
  const TrainConfig surrogate_train{spec.train_epochs, spec.train_learning_rate,
                                    mix_seed(spec.seed, {kTagTrain, 2})};
  const ClassifierModel victim =
      train_classifier(train_split, FeatureSpec{spec.victim_grid, 0}, victim_train);
  const ClassifierModel surrogate =
      train_classifier(train_split, FeatureSpec{spec.surrogate_grid, 0}, surrogate_train);

  const CodecConfig codec = codec_for(spec, spec.pipeline_lambda);
  const auto target_rule = [](const LabeledClip& item) {
    return (item.label + 1) % kMotionClassCount;
  };

  // Offline per-clip attacks against the victim, precomputed so the ASR
  // evaluation itself stays cheap.
  auto offline_deltas = [&](bool targeted) {
    std::vector<FlickerPerturbation> deltas(test_split.size());
    parallel_for(test_split.size(), [&](std::size_t i) {
      AttackConfig attack;
      attack.lambda = spec.pipeline_lambda;
      attack.epsilon = spec.epsilon;
      attack.iterations = spec.attack_iterations;
      attack.step_size = spec.step_size;
      attack.fd_step = spec.fd_step;
      attack.zeta = spec.zeta;
      attack.beta = spec.beta;
      attack.mode = AttackMode::classification_only;
      if (targeted) attack.target_class = target_rule(test_split[i]);
      attack.seed = mix_seed(spec.seed, {kTagAttack, targeted ? 1u : 0u, i});
      deltas[i] = attack_offline(test_split[i].clip, attack, codec, &victim).delta;
    });
    return deltas;
  };

  const std::vector<FlickerPerturbation> targeted_deltas = offline_deltas(true);
  const std::vector<FlickerPerturbation> untargeted_deltas = offline_deltas(false);

  // Universal perturbation trained against the surrogate (transfer row).
  std::vector<VideoClip> train_clips;
  train_clips.reserve(train_split.size());
  for (const LabeledClip& item : train_split) train_clips.push_back(item.clip);
  AttackConfig universal;
  universal.lambda = spec.pipeline_lambda;
  universal.epsilon = spec.epsilon;
  universal.iterations = spec.universal_steps;
  universal.minibatch = spec.minibatch;
  universal.step_size = spec.step_size;
  universal.fd_step = spec.fd_step;
  universal.zeta = spec.zeta;
  universal.beta = spec.beta;
  universal.mode = AttackMode::classification_only;
  universal.seed = mix_seed(spec.seed, {kTagUniversal});
  const FlickerPerturbation transfer_delta =
      attack_universal(train_clips, universal, codec, &surrogate).delta;

  const AsrResult targeted_asr = evaluate_asr(
      victim, test_split,
      [&](const LabeledClip&, std::size_t i) { return targeted_deltas[i]; },
      std::optional<std::function<int(const LabeledClip&)>>(target_rule), codec);
  const AsrResult untargeted_asr = evaluate_asr(
      victim, test_split,
      [&](const LabeledClip&, std::size_t i) { return untargeted_deltas[i]; }, std::nullopt,
      codec);
  const AsrResult transfer_asr = evaluate_asr(
      victim, test_split, [&](const LabeledClip&, std::size_t) { return transfer_delta; },
      std::nullopt, codec);
  const AsrResult noise_asr = evaluate_asr(
      victim, test_split,
      [&](const LabeledClip& item, std::size_t i) {
        return sample_uniform_flicker(item.clip.frame_count(), item.clip.channels(), spec.epsilon,
                                      mix_seed(spec.seed, {kTagNoise, i}));
      },
      std::nullopt, codec);

  const std::string surrogate_tag = "grid" + std::to_string(spec.surrogate_grid);
  AsrTableResult result;
  result.rows = {
      {"attack", "offline", "T", "-", targeted_asr.asr, targeted_asr.clean_accuracy},
      {"attack", "offline", "U", "-", untargeted_asr.asr, untargeted_asr.clean_accuracy},
      {"attack", "online", "U", surrogate_tag, transfer_asr.asr, transfer_asr.clean_accuracy},
      {"baseline", "uniform-noise", "U", "-", noise_asr.asr, noise_asr.clean_accuracy},
  };

  result.csv_path = out_dir / "asr_table.csv";
  std::ofstream out(result.csv_path);
  if (!out) fail("cannot write " + result.csv_path.string());
  out << "kind,attack,type,surrogate,asr,clean_acc\n";
  for (const AsrRow& r : result.rows) {
    out << r.kind << ',' << r.attack << ',' << r.type << ',' << r.surrogate << ','
        << format_number(r.asr) << ',' << format_number(r.clean_acc) << '\n';
  }
  out.close();
  write_sidecar(result.csv_path, spec);
  return result;
}

OnsetTraceResult run_onset_trace(const ExperimentSpec& spec) {
  const auto out_dir = prepare_output(spec);
  const VideoClip clip = spec.clip_path
                             ? load_clip(*spec.clip_path)
                             : make_pan_clip(64, 64, spec.onset_clip_frames, spec.onset_pan_speed,
                                             spec.seed);
  if (spec.onset_frame < 0 || spec.onset_frame >= clip.frame_count())
    throw std::invalid_argument("onset frame must lie inside the clip");

  const CodecConfig codec = codec_for(spec, spec.pipeline_lambda);

  // Perturbation: explicit file, or an offline attack on the first GOP,
  // tiled cyclically from the onset frame (the online deployment shape).
  FlickerPerturbation delta;
  if (spec.delta_path) {
    delta = load_perturbation(*spec.delta_path).delta;
  } else {
    VideoClip head;
    head.fps = clip.fps;
    const int head_len = std::min(spec.gop_size, clip.frame_count());
    head.frames.assign(clip.frames.begin(), clip.frames.begin() + head_len);
    AttackConfig attack;
    attack.lambda = spec.pipeline_lambda;
    attack.epsilon = spec.epsilon;
    attack.iterations = spec.attack_iterations;
    attack.step_size = spec.step_size;
    attack.fd_step = spec.fd_step;
    attack.zeta = spec.zeta;
    attack.mode = AttackMode::compression_only;
    attack.seed = mix_seed(spec.seed, {kTagOnset});
    delta = attack_offline(head, attack, codec).delta;
  }
  if (spec.channel) delta = realize(delta, *spec.channel).values;

  VideoClip attacked = clip;
  for (int t = spec.onset_frame; t < clip.frame_count(); ++t) {
    const int src = (t - spec.onset_frame) % delta.frames;
    Frame& frame = attacked.frames[t];
    for (std::size_t s = 0; s < frame.samples.size(); ++s)
      frame.samples[s] = std::clamp(
          frame.samples[s] + delta.values[static_cast<std::size_t>(src) * delta.channels +
                                          static_cast<int>(s % frame.channels)],
          0.0, 1.0);
  }

  const CodedClip clean_coded = encode_clip(clip, codec, clip);
  const CodedClip attacked_coded = encode_clip(attacked, codec, clip);

  auto rows_of = [&](const CodedClip& coded) {
    std::vector<OnsetRow> rows;
    for (int t = 0; t < clip.frame_count(); ++t)
      rows.push_back({t, coded.frames[t].frame_type, coded.frames[t].total_bits,
                      psnr(clip.frames[t], coded.decoded.frames[t])});
    return rows;
  };

  OnsetTraceResult result;
  result.clean = rows_of(clean_coded);
  result.attacked = rows_of(attacked_coded);
  result.clean_csv = out_dir / "clean_trace.csv";
  result.attacked_csv = out_dir / "onset_trace.csv";

  auto write_rows = [&](const std::filesystem::path& path, const std::vector<OnsetRow>& rows) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << "frame,frame_type,bits,psnr\n";
    for (const OnsetRow& r : rows)
      out << r.frame << ',' << r.frame_type << ',' << format_number(r.bits) << ','
          << format_number(r.psnr) << '\n';
    out.close();
  };
  write_rows(result.clean_csv, result.clean);
  write_rows(result.attacked_csv, result.attacked);
  write_sidecar(result.attacked_csv, spec);
  return result;
}

ConvergenceResult run_convergence(const ExperimentSpec& spec) {
  const auto out_dir = prepare_output(spec);

  VideoClip clip;
  std::vector<LabeledClip> dataset;
  if (spec.clip_path) {
    clip = load_clip(*spec.clip_path);
  } else {
    dataset = load_dataset(spec.dataset_dir);
    clip = dataset.front().clip;
  }

  ClassifierModel model;
  const bool needs_model = spec.attack_mode != AttackMode::compression_only;
  if (needs_model) {
    if (spec.model_path) {
      model = load_model(*spec.model_path);
    } else {
      if (dataset.empty()) dataset = load_dataset(spec.dataset_dir);
      model = train_classifier(dataset, FeatureSpec{spec.victim_grid, 0},
                               TrainConfig{spec.train_epochs, spec.train_learning_rate,
                                           mix_seed(spec.seed, {kTagTrain, 1})});
    }
  }

  AttackConfig attack;
  attack.lambda = spec.pipeline_lambda;
  attack.epsilon = spec.epsilon;
  attack.iterations = spec.attack_iterations;
  attack.step_size = spec.step_size;
  attack.fd_step = spec.fd_step;
  attack.zeta = spec.zeta;
  attack.beta = spec.beta;
  attack.mode = spec.attack_mode;
  attack.seed = mix_seed(spec.seed, {kTagAttack});
  const CodecConfig codec = codec_for(spec, spec.pipeline_lambda);
  const AttackReport report =
      attack_offline(clip, attack, codec, needs_model ? &model : nullptr);

  ConvergenceResult result;
  result.rows.push_back(report.initial);
  for (const IterationStat& s : report.trace) result.rows.push_back(s);

  result.csv_path = out_dir / "convergence.csv";
  std::ofstream out(result.csv_path);
  if (!out) fail("cannot write " + result.csv_path.string());
  out << "iteration,psnr,bpp,class_prob,thickness,roughness,total\n";
  for (const IterationStat& s : result.rows) {
    out << s.iteration << ',' << format_number(s.psnr) << ',' << format_number(s.bpp) << ','
        << format_number(s.class_prob) << ',' << format_number(s.thick) << ','
        << format_number(s.rough) << ',' << format_number(s.total) << '\n';
  }
  out.close();
  write_sidecar(result.csv_path, spec);
  return result;
}

UniversalEvalResult run_universal_eval(const ExperimentSpec& spec) {
  const auto out_dir = prepare_output(spec);
  const std::vector<LabeledClip> dataset = load_dataset(spec.dataset_dir);
  const std::size_t n = dataset.size();
  if (spec.holdout_clips < 1 || static_cast<std::size_t>(spec.holdout_clips) >= n)
    throw std::invalid_argument("holdout_clips must leave a nonempty train split");

  const std::vector<std::size_t> order = shuffled_indices(n, mix_seed(spec.seed, {kTagSplit}));
  std::vector<VideoClip> train_clips;
  std::vector<VideoClip> holdout;
  for (std::size_t i = 0; i + spec.holdout_clips < n; ++i)
    train_clips.push_back(dataset[order[i]].clip);
  for (std::size_t i = n - spec.holdout_clips; i < n; ++i)
    holdout.push_back(dataset[order[i]].clip);

  const double lambda = spec.pipeline_lambda;
  const CodecConfig codec = codec_for(spec, lambda);

  AttackConfig attack;
  attack.lambda = lambda;
  attack.epsilon = spec.epsilon;
  attack.iterations = spec.universal_steps;
  attack.minibatch = spec.minibatch;
  attack.step_size = spec.step_size;
  attack.fd_step = spec.fd_step;
  attack.zeta = spec.zeta;
  attack.mode = AttackMode::compression_only;
  attack.seed = mix_seed(spec.seed, {kTagUniversal});
  const AttackReport report = attack_universal(train_clips, attack, codec);

  UniversalEvalResult result;
  result.delta = report.delta;
  save_perturbation(result.delta, spec.epsilon, out_dir / "universal_delta.json");

  const FlickerPerturbation noise =
      sample_uniform_flicker(spec.gop_size, result.delta.channels, spec.epsilon,
                             mix_seed(spec.seed, {kTagNoise}));

  const std::size_t h = holdout.size();
  std::vector<double> psnr_clean(h), psnr_universal(h), psnr_noise_v(h), obj_universal(h),
      obj_noise(h);
  parallel_for(h, [&](std::size_t i) {
    const VideoClip& clip = holdout[i];
    psnr_clean[i] = encode_clip(clip, codec, clip).psnr_vs;
    const CodedClip coded_universal =
        encode_clip(apply_flicker(clip, result.delta, 0), codec, clip);
    psnr_universal[i] = coded_universal.psnr_vs;
    const CodedClip coded_noise = encode_clip(apply_flicker(clip, noise, 0), codec, clip);
    psnr_noise_v[i] = coded_noise.psnr_vs;
    obj_universal[i] =
        hard_compression_objective(clip, result.delta, 0, lambda, spec.zeta, codec);
    obj_noise[i] = hard_compression_objective(clip, noise, 0, lambda, spec.zeta, codec);
  });

  result.mean_objective_universal = mean_of(obj_universal);
  result.mean_objective_noise = mean_of(obj_noise);
  result.mean_psnr_drop_universal = mean_of(psnr_clean) - mean_of(psnr_universal);
  result.mean_psnr_drop_noise = mean_of(psnr_clean) - mean_of(psnr_noise_v);

  result.objective_by_offset.assign(spec.gop_size, 0.0);
  std::vector<std::vector<double>> per_offset(spec.gop_size, std::vector<double>(h, 0.0));
  parallel_for(h * static_cast<std::size_t>(spec.gop_size), [&](std::size_t job) {
    const std::size_t i = job % h;
    const int tau = static_cast<int>(job / h);
    per_offset[tau][i] =
        hard_compression_objective(holdout[i], result.delta, tau, lambda, spec.zeta, codec);
  });
  for (int tau = 0; tau < spec.gop_size; ++tau)
    result.objective_by_offset[tau] = mean_of(per_offset[tau]);

  result.csv_path = out_dir / "universal_eval.csv";
  {
    std::ofstream out(result.csv_path);
    if (!out) fail("cannot write " + result.csv_path.string());
    out << "holdout_index,psnr_clean,psnr_universal,psnr_noise,objective_universal,objective_"
           "noise\n";
    for (std::size_t i = 0; i < h; ++i) {
      out << i << ',' << format_number(psnr_clean[i]) << ',' << format_number(psnr_universal[i])
          << ',' << format_number(psnr_noise_v[i]) << ',' << format_number(obj_universal[i])
          << ',' << format_number(obj_noise[i]) << '\n';
    }
  }
  write_sidecar(result.csv_path, spec);

  result.offsets_csv_path = out_dir / "universal_offsets.csv";
  {
    std::ofstream out(result.offsets_csv_path);
    if (!out) fail("cannot write " + result.offsets_csv_path.string());
    out << "offset,mean_objective\n";
    for (int tau = 0; tau < spec.gop_size; ++tau)
      out << tau << ',' << format_number(result.objective_by_offset[tau]) << '\n';
  }
  write_sidecar(result.offsets_csv_path, spec);
  return result;
}

}  // namespace flicklab
