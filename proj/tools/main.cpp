// flicklab command line: synthetic datasets, the toy codec, flickering
// perturbation attacks, the bulb channel simulator, and the experiment
// runners. Every failure exits nonzero with a JSON error on stderr.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flicklab/attack.hpp"
#include "flicklab/channel.hpp"
#include "flicklab/classifier.hpp"
#include "flicklab/codec.hpp"
#include "flicklab/experiments.hpp"
#include "flicklab/flicker.hpp"
#include "flicklab/rng.hpp"
#include "flicklab/version.hpp"
#include "flicklab/video.hpp"
#include "json.hpp"

namespace {

using namespace flicklab;

AttackMode parse_mode(const std::string& name) {
  if (name == "compression-only") return AttackMode::compression_only;
  if (name == "joint") return AttackMode::joint;
  if (name == "classification-only") return AttackMode::classification_only;
  throw CLI::ValidationError("mode", "unknown attack mode: " + name);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << "\n";
}

struct CommonSpecFlags {
  ExperimentSpec spec;

  void add_dataset(CLI::App* cmd) {
    cmd->add_option("--dataset", spec.dataset_dir, "Dataset directory (with dataset.json)")
        ->required();
  }
  void add_output(CLI::App* cmd) {
    cmd->add_option("--out", spec.output_dir, "Output directory")
        ->envname("FLICKLAB_OUT")
        ->required();
  }
  void add_codec(CLI::App* cmd) {
    cmd->add_option("--gop", spec.gop_size, "GOP size");
    cmd->add_option("--block-size", spec.block_size, "Transform/motion block size");
    cmd->add_option("--search-radius", spec.search_radius, "Motion search radius");
  }
  void add_attack(CLI::App* cmd) {
    cmd->add_option("--epsilon", spec.epsilon, "L-infinity budget");
    cmd->add_option("--iterations", spec.attack_iterations, "Attack iterations");
    cmd->add_option("--step-size", spec.step_size, "Step size (default epsilon/10)");
    cmd->add_option("--fd-step", spec.fd_step, "Finite-difference probe size");
    cmd->add_option("--zeta", spec.zeta, "Regularizer weight");
    cmd->add_option("--beta", spec.beta, "Classification weight (default: auto-balance)");
  }
  void add_seed(CLI::App* cmd) { cmd->add_option("--seed", spec.seed, "Run seed"); }
};

ChannelConfig parse_channel_flags(CLI::App* cmd, ChannelConfig& ch, bool& enabled) {
  cmd->add_flag("--channel", enabled, "Route the perturbation through the bulb channel");
  cmd->add_option("--channel-levels", ch.levels_per_channel, "Bulb levels per channel");
  cmd->add_option("--channel-gain", ch.gain, "Peak additive intensity");
  cmd->add_option("--channel-baseline", ch.baseline_level, "Bulb operating point");
  cmd->add_option("--channel-updates", ch.max_updates_per_second, "Bulb updates per second");
  cmd->add_option("--channel-fps", ch.camera_fps, "Camera frame rate");
  cmd->add_option("--channel-jitter", ch.latency_jitter_frames, "Latency jitter bound (frames)");
  cmd->add_option("--channel-seed", ch.seed, "Channel jitter seed");
  return ch;
}

int run(int argc, char** argv) {
  CLI::App app{"flicklab: flickering-light attacks on a motion-compensated toy codec"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // ---- gen-dataset ----
  auto* gen = app.add_subcommand("gen-dataset", "Generate a labeled synthetic motion dataset");
  SyntheticDatasetConfig gen_cfg;
  std::filesystem::path gen_out;
  std::string gen_preset = "classifier";
  gen->add_option("--out", gen_out, "Output dataset directory")
      ->envname("FLICKLAB_OUT")
      ->required();
  gen->add_option("--preset", gen_preset, "Preset: classifier (T=16) or suite (T=30)")
      ->check(CLI::IsMember({"classifier", "suite", "custom"}));
  gen->add_option("--clips-per-class", gen_cfg.clips_per_class, "Clips per class");
  gen->add_option("--width", gen_cfg.width, "Frame width");
  gen->add_option("--height", gen_cfg.height, "Frame height");
  gen->add_option("--frames", gen_cfg.frames, "Frames per clip");
  gen->add_option("--object-size", gen_cfg.object_size, "Moving object size");
  gen->add_option("--speed", gen_cfg.speed, "Object speed (pixels/frame)");
  gen->add_option("--noise", gen_cfg.noise_level, "Per-pixel noise level");
  gen->add_option("--fps", gen_cfg.fps, "Clip frame rate");
  std::uint64_t gen_seed = 2026;
  gen->add_option("--seed", gen_seed, "Dataset seed");

  // ---- train-classifier ----
  auto* train = app.add_subcommand("train-classifier", "Train the motion classifier");
  std::filesystem::path train_dataset, train_out;
  FeatureSpec train_spec;
  TrainConfig train_cfg;
  double holdout_fraction = 0.1;
  train->add_option("--dataset", train_dataset, "Dataset directory")->required();
  train->add_option("--out", train_out, "Model output file")->envname("FLICKLAB_OUT")->required();
  train->add_option("--grid", train_spec.grid, "Feature grid size D");
  train->add_option("--epochs", train_cfg.epochs, "Training epochs");
  train->add_option("--lr", train_cfg.learning_rate, "Learning rate");
  train->add_option("--seed", train_cfg.seed, "Training seed");
  train->add_option("--holdout-fraction", holdout_fraction, "Held-out accuracy fraction");

  // ---- encode ----
  auto* enc = app.add_subcommand("encode", "Encode a clip and report rate/distortion");
  std::filesystem::path enc_clip, enc_out, enc_decoded;
  CodecConfig enc_codec;
  enc->add_option("--clip", enc_clip, "Clip manifest")->required();
  enc->add_option("--out", enc_out, "Summary JSON output")->envname("FLICKLAB_OUT")->required();
  enc->add_option("--decoded-out", enc_decoded, "Optional decoded clip manifest");
  enc->add_option("--lambda", enc_codec.lambda, "Rate-distortion weight");
  enc->add_option("--gop", enc_codec.gop_size, "GOP size");
  enc->add_option("--block-size", enc_codec.block_size, "Block size");
  enc->add_option("--search-radius", enc_codec.search_radius, "Motion search radius");

  // ---- attack-offline ----
  auto* off = app.add_subcommand("attack-offline", "Per-video flickering attack");
  std::filesystem::path off_clip, off_out, off_trace, off_delta, off_model;
  std::string off_mode = "compression-only";
  AttackConfig off_cfg;
  CodecConfig off_codec;
  off_codec.block_size = 6;
  off->add_option("--clip", off_clip, "Clip manifest")->required();
  off->add_option("--out", off_out, "Attack report JSON")->envname("FLICKLAB_OUT")->required();
  off->add_option("--trace", off_trace, "Loss trace CSV");
  off->add_option("--delta-out", off_delta, "Write the final perturbation JSON");
  off->add_option("--model", off_model, "Classifier model file (joint/classification modes)");
  off->add_option("--mode", off_mode, "compression-only | joint | classification-only");
  off->add_option("--lambda", off_cfg.lambda, "Rate-distortion weight");
  off->add_option("--epsilon", off_cfg.epsilon, "L-infinity budget");
  off->add_option("--iterations", off_cfg.iterations, "Iterations");
  off->add_option("--step-size", off_cfg.step_size, "Step size (default epsilon/10)");
  off->add_option("--fd-step", off_cfg.fd_step, "Finite-difference probe size");
  off->add_option("--zeta", off_cfg.zeta, "Regularizer weight");
  off->add_option("--beta", off_cfg.beta, "Classification weight (default auto)");
  int off_target = -1;
  off->add_option("--target", off_target, "Target class (targeted attack)");
  off->add_option("--seed", off_cfg.seed, "Attack seed");
  off->add_option("--gop", off_codec.gop_size, "GOP size");
  off->add_option("--block-size", off_codec.block_size, "Block size");
  off->add_option("--search-radius", off_codec.search_radius, "Motion search radius");

  // ---- attack-universal ----
  auto* uni = app.add_subcommand("attack-universal", "Train a universal (online) perturbation");
  CommonSpecFlags uni_flags;
  uni_flags.spec.kind = ExperimentKind::transfer;
  std::filesystem::path uni_model;
  std::string uni_mode = "compression-only";
  bool uni_eval = false;
  uni_flags.add_dataset(uni);
  uni_flags.add_output(uni);
  uni_flags.add_codec(uni);
  uni_flags.add_attack(uni);
  uni_flags.add_seed(uni);
  uni->add_option("--steps", uni_flags.spec.universal_steps, "Training steps");
  uni->add_option("--minibatch", uni_flags.spec.minibatch, "Minibatch size");
  uni->add_option("--holdout", uni_flags.spec.holdout_clips, "Held-out clips for --eval");
  uni->add_option("--lambda", uni_flags.spec.pipeline_lambda, "Rate-distortion weight");
  uni->add_option("--mode", uni_mode, "compression-only | joint | classification-only");
  uni->add_option("--model", uni_model, "Classifier model (joint/classification modes)");
  uni->add_flag("--eval", uni_eval, "Also score against noise and offsets on a holdout split");

  // ---- rd-sweep ----
  auto* sweep = app.add_subcommand("rd-sweep", "Rate-distortion sweep with attacks and baselines");
  CommonSpecFlags sweep_flags;
  sweep_flags.spec.kind = ExperimentKind::rd_sweep;
  sweep_flags.add_dataset(sweep);
  sweep_flags.add_output(sweep);
  sweep_flags.add_codec(sweep);
  sweep_flags.add_attack(sweep);
  sweep_flags.add_seed(sweep);
  sweep->add_option("--lambdas", sweep_flags.spec.lambdas, "Lambda list");
  sweep->add_option("--epsilons", sweep_flags.spec.epsilons, "Epsilon list");

  // ---- asr-table ----
  auto* asr = app.add_subcommand("asr-table", "Attack success rate table (victim + surrogate)");
  CommonSpecFlags asr_flags;
  asr_flags.spec.kind = ExperimentKind::asr_table;
  asr_flags.add_dataset(asr);
  asr_flags.add_output(asr);
  asr_flags.add_codec(asr);
  asr_flags.add_attack(asr);
  asr_flags.add_seed(asr);
  asr->add_option("--lambda", asr_flags.spec.pipeline_lambda, "Pipeline lambda");
  asr->add_option("--victim-grid", asr_flags.spec.victim_grid, "Victim feature grid");
  asr->add_option("--surrogate-grid", asr_flags.spec.surrogate_grid, "Surrogate feature grid");
  asr->add_option("--steps", asr_flags.spec.universal_steps, "Universal training steps");
  asr->add_option("--minibatch", asr_flags.spec.minibatch, "Universal minibatch");
  asr->add_option("--epochs", asr_flags.spec.train_epochs, "Classifier training epochs");
  asr->add_option("--lr", asr_flags.spec.train_learning_rate, "Classifier learning rate");

  // ---- onset-trace ----
  auto* onset = app.add_subcommand("onset-trace", "Per-frame trace with a mid-stream attack onset");
  CommonSpecFlags onset_flags;
  onset_flags.spec.kind = ExperimentKind::onset_trace;
  std::filesystem::path onset_clip, onset_delta;
  ChannelConfig onset_channel;
  bool onset_use_channel = false;
  onset_flags.add_output(onset);
  onset_flags.add_codec(onset);
  onset_flags.add_attack(onset);
  onset_flags.add_seed(onset);
  onset->add_option("--clip", onset_clip, "Clip manifest (default: generated pan clip)");
  onset->add_option("--delta", onset_delta, "Perturbation JSON (default: first-GOP attack)");
  onset->add_option("--onset", onset_flags.spec.onset_frame, "First attacked frame");
  onset->add_option("--frames", onset_flags.spec.onset_clip_frames, "Generated clip length");
  onset->add_option("--pan-speed", onset_flags.spec.onset_pan_speed, "Generated pan speed");
  onset->add_option("--lambda", onset_flags.spec.pipeline_lambda, "Pipeline lambda");
  parse_channel_flags(onset, onset_channel, onset_use_channel);

  // ---- convergence ----
  auto* conv = app.add_subcommand("convergence", "Per-iteration attack convergence trace");
  CommonSpecFlags conv_flags;
  conv_flags.spec.kind = ExperimentKind::convergence;
  std::filesystem::path conv_clip, conv_model;
  std::string conv_mode = "joint";
  conv->add_option("--dataset", conv_flags.spec.dataset_dir,
                   "Dataset directory (clip source / classifier training)");
  conv_flags.add_output(conv);
  conv_flags.add_codec(conv);
  conv_flags.add_attack(conv);
  conv_flags.add_seed(conv);
  conv->add_option("--clip", conv_clip, "Clip manifest override");
  conv->add_option("--model", conv_model, "Classifier model file");
  conv->add_option("--mode", conv_mode, "compression-only | joint | classification-only");
  conv->add_option("--lambda", conv_flags.spec.pipeline_lambda, "Pipeline lambda");

  // ---- simulate-channel ----
  auto* sim = app.add_subcommand("simulate-channel", "Realize a perturbation through the bulb");
  std::filesystem::path sim_delta, sim_out, sim_log, sim_clip, sim_captured;
  ChannelConfig sim_channel;
  bool sim_enabled = true;  // flag exists for interface symmetry
  sim->add_option("--delta", sim_delta, "Perturbation JSON")->required();
  sim->add_option("--out", sim_out, "Realized perturbation JSON")
      ->envname("FLICKLAB_OUT")
      ->required();
  sim->add_option("--log", sim_log, "Realization log JSON");
  sim->add_option("--clip", sim_clip, "Optional clip to capture with the realized flicker");
  sim->add_option("--captured-out", sim_captured, "Captured clip manifest");
  parse_channel_flags(sim, sim_channel, sim_enabled);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    SyntheticDatasetConfig cfg = gen_cfg;
    if (gen_preset == "classifier" && gen->count("--clips-per-class") == 0) {
      cfg = classifier_dataset_config(gen_seed);
    } else if (gen_preset == "suite") {
      cfg = suite_dataset_config(gen_seed);
    } else {
      cfg.seed = gen_seed;
    }
    // explicit flags win over the preset
    if (gen->count("--clips-per-class")) cfg.clips_per_class = gen_cfg.clips_per_class;
    if (gen->count("--width")) cfg.width = gen_cfg.width;
    if (gen->count("--height")) cfg.height = gen_cfg.height;
    if (gen->count("--frames")) cfg.frames = gen_cfg.frames;
    if (gen->count("--object-size")) cfg.object_size = gen_cfg.object_size;
    if (gen->count("--speed")) cfg.speed = gen_cfg.speed;
    if (gen->count("--noise")) cfg.noise_level = gen_cfg.noise_level;
    if (gen->count("--fps")) cfg.fps = gen_cfg.fps;
    write_dataset(generate_dataset(cfg), gen_out);
    std::cout << "wrote dataset to " << gen_out.string() << "\n";
    return 0;
  }

  if (train->parsed()) {
    std::vector<LabeledClip> dataset = load_dataset(train_dataset);
    // deterministic holdout from the tail of a seeded shuffle
    std::vector<LabeledClip> fit = dataset, held;
    if (holdout_fraction > 0.0 && dataset.size() > 4) {
      const auto held_count =
          std::max<std::size_t>(1, static_cast<std::size_t>(dataset.size() * holdout_fraction));
      SplitMix64 rng(train_cfg.seed);
      std::vector<std::size_t> order(dataset.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(
                                    rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      fit.clear();
      for (std::size_t i = 0; i + held_count < order.size(); ++i)
        fit.push_back(dataset[order[i]]);
      for (std::size_t i = order.size() - held_count; i < order.size(); ++i)
        held.push_back(dataset[order[i]]);
    }
    const ClassifierModel model = train_classifier(fit, train_spec, train_cfg);
    save_model(model, train_out);
    int correct = 0;
    for (const LabeledClip& item : held)
      if (predict(model, item.clip).argmax() == item.label) ++correct;
    std::cout << "trained on " << fit.size() << " clips, final loss " << model.final_loss << "\n";
    if (!held.empty())
      std::cout << "held-out accuracy: " << static_cast<double>(correct) / held.size() << " ("
                << correct << "/" << held.size() << ")\n";
    return 0;
  }

  if (enc->parsed()) {
    const VideoClip clip = load_clip(enc_clip);
    const CodedClip coded = encode_clip(clip, enc_codec, clip);
    write_text(enc_out, coded_clip_summary_json(coded));
    if (!enc_decoded.empty()) save_clip(coded.decoded, enc_decoded);
    std::cout << "bpp " << coded.bpp << ", psnr " << coded.psnr_vs << " dB\n";
    return 0;
  }

  if (off->parsed()) {
    const VideoClip clip = load_clip(off_clip);
    off_cfg.mode = parse_mode(off_mode);
    if (off_target >= 0) off_cfg.target_class = off_target;
    ClassifierModel model;
    const bool needs_model = off_cfg.mode != AttackMode::compression_only;
    if (needs_model) {
      if (off_model.empty())
        throw std::runtime_error("attack mode " + off_mode + " requires --model");
      model = load_model(off_model);
    }
    const AttackReport report =
        attack_offline(clip, off_cfg, off_codec, needs_model ? &model : nullptr);
    write_text(off_out, attack_report_json(report));
    if (!off_trace.empty()) write_trace_csv(report, off_trace);
    if (!off_delta.empty()) save_perturbation(report.delta, off_cfg.epsilon, off_delta);
    std::cout << "clean bpp " << report.clean_bpp << " -> adv bpp " << report.adv_bpp
              << ", clean psnr " << report.clean_psnr << " -> adv psnr " << report.adv_psnr
              << "\n";
    return 0;
  }

  if (uni->parsed()) {
    ExperimentSpec& spec = uni_flags.spec;
    spec.attack_mode = parse_mode(uni_mode);
    if (uni_eval) {
      if (spec.attack_mode != AttackMode::compression_only)
        throw std::runtime_error("--eval supports compression-only mode");
      const UniversalEvalResult result = run_universal_eval(spec);
      std::cout << "universal objective " << result.mean_objective_universal << " vs noise "
                << result.mean_objective_noise << "; psnr drop "
                << result.mean_psnr_drop_universal << " vs noise " << result.mean_psnr_drop_noise
                << "\n";
      return 0;
    }
    const std::vector<LabeledClip> dataset = load_dataset(spec.dataset_dir);
    std::vector<VideoClip> clips;
    for (const LabeledClip& item : dataset) clips.push_back(item.clip);
    ClassifierModel model;
    const bool needs_model = spec.attack_mode != AttackMode::compression_only;
    if (needs_model) {
      if (uni_model.empty()) throw std::runtime_error("this mode requires --model");
      model = load_model(uni_model);
    }
    AttackConfig cfg;
    cfg.lambda = spec.pipeline_lambda;
    cfg.epsilon = spec.epsilon;
    cfg.iterations = spec.universal_steps;
    cfg.minibatch = spec.minibatch;
    cfg.step_size = spec.step_size;
    cfg.fd_step = spec.fd_step;
    cfg.zeta = spec.zeta;
    cfg.beta = spec.beta;
    cfg.mode = spec.attack_mode;
    cfg.seed = mix_seed(spec.seed, {4});
    const CodecConfig codec = codec_for(spec, spec.pipeline_lambda);
    const AttackReport report =
        attack_universal(clips, cfg, codec, needs_model ? &model : nullptr);
    std::filesystem::create_directories(spec.output_dir);
    save_perturbation(report.delta, cfg.epsilon, spec.output_dir / "universal_delta.json");
    write_text(spec.output_dir / "universal_report.json", attack_report_json(report));
    write_trace_csv(report, spec.output_dir / "universal_trace.csv");
    std::cout << "trained universal perturbation (" << report.delta.frames << " frames); "
              << "train-set bpp " << report.clean_bpp << " -> " << report.adv_bpp << "\n";
    return 0;
  }

  if (sweep->parsed()) {
    const RdSweepResult result = run_rd_sweep(sweep_flags.spec);
    std::cout << "wrote " << result.rows.size() << " rows to " << result.csv_path.string()
              << "\n";
    return 0;
  }

  if (asr->parsed()) {
    const AsrTableResult result = run_asr_table(asr_flags.spec);
    for (const AsrRow& row : result.rows)
      std::cout << row.attack << " (" << row.type << ") asr " << row.asr << ", clean acc "
                << row.clean_acc << "\n";
    std::cout << "wrote " << result.csv_path.string() << "\n";
    return 0;
  }

  if (onset->parsed()) {
    ExperimentSpec& spec = onset_flags.spec;
    if (!onset_clip.empty()) spec.clip_path = onset_clip;
    if (!onset_delta.empty()) spec.delta_path = onset_delta;
    if (onset_use_channel) spec.channel = onset_channel;
    const OnsetTraceResult result = run_onset_trace(spec);
    std::cout << "wrote " << result.attacked_csv.string() << " and "
              << result.clean_csv.string() << "\n";
    return 0;
  }

  if (conv->parsed()) {
    ExperimentSpec& spec = conv_flags.spec;
    spec.attack_mode = parse_mode(conv_mode);
    if (!conv_clip.empty()) spec.clip_path = conv_clip;
    if (!conv_model.empty()) spec.model_path = conv_model;
    if (spec.dataset_dir.empty() && !spec.clip_path)
      throw std::runtime_error("convergence needs --dataset or --clip");
    const ConvergenceResult result = run_convergence(spec);
    std::cout << "wrote " << result.rows.size() << " rows to " << result.csv_path.string()
              << "\n";
    return 0;
  }

  if (sim->parsed()) {
    const LoadedPerturbation loaded = load_perturbation(sim_delta);
    const RealizedPerturbation realized = realize(loaded.delta, sim_channel);
    save_perturbation(realized.values, loaded.epsilon, sim_out);
    if (!sim_log.empty()) write_text(sim_log, realization_log_json(realized));
    if (!sim_clip.empty()) {
      if (sim_captured.empty())
        throw std::runtime_error("--clip needs --captured-out for the captured clip");
      const VideoClip clip = load_clip(sim_clip);
      save_clip(simulate_capture(clip, realized), sim_captured);
    }
    std::cout << "realized perturbation (jitter " << realized.log.applied_jitter << ", hold "
              << realized.log.hold_span << ")\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = {{"message", e.what()}, {"tool", "flicklab"}, {"version", kVersion}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
