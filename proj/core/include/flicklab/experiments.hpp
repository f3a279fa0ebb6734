#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flicklab/attack.hpp"
#include "flicklab/channel.hpp"
#include "flicklab/classifier.hpp"
#include "flicklab/codec.hpp"
#include "flicklab/flicker.hpp"
#include "flicklab/video.hpp"

namespace flicklab {

enum class ExperimentKind { rd_sweep, asr_table, convergence, onset_trace, transfer };

// Every run derives all randomness from `seed` by stable hashing (per-clip
// sub-seeds), so results are byte-identical no matter the worker count.
// Each emitted CSV gets a <name>.meta.json sidecar with the resolved spec.
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::rd_sweep;
  std::filesystem::path dataset_dir;
  std::filesystem::path output_dir;
  std::uint64_t seed = 2026;

  // codec / suite
  int gop_size = 10;
  int block_size = 6;  // desk-scale suite block size
  int search_radius = 4;

  // attack
  std::vector<double> lambdas = {256.0, 512.0, 1024.0, 2048.0};
  std::vector<double> epsilons = {0.04, 0.12, 0.16, 0.20};
  double epsilon = 0.2;  // single-epsilon experiments
  AttackMode attack_mode = AttackMode::compression_only;
  int attack_iterations = 16;
  double step_size = -1.0;
  double fd_step = 0.01;
  double zeta = 0.1;
  double beta = -1.0;

  // universal
  int universal_steps = 200;
  int minibatch = 4;
  int holdout_clips = 8;

  // classifier pipeline
  double pipeline_lambda = 256.0;
  int victim_grid = 8;
  int surrogate_grid = 6;
  int train_epochs = 300;
  double train_learning_rate = 2.0;

  // onset trace
  int onset_frame = 75;
  int onset_clip_frames = 150;
  int onset_pan_speed = 1;

  std::optional<std::filesystem::path> clip_path;   // onset / convergence input
  std::optional<std::filesystem::path> delta_path;  // onset perturbation override
  std::optional<std::filesystem::path> model_path;  // convergence model override
  std::optional<ChannelConfig> channel;
};

CodecConfig codec_for(const ExperimentSpec& spec, double lambda);

// Desk-scale defaults: 40 labeled clips (10 per class), 64x64, 30 frames.
SyntheticDatasetConfig suite_dataset_config(std::uint64_t seed);
// Classifier task defaults: 400 labeled clips (100 per class), 64x64, 16 frames.
SyntheticDatasetConfig classifier_dataset_config(std::uint64_t seed);

// Long smooth clip for onset traces: a texture panning with toroidal wrap,
// so any frame count works without an object leaving the frame.
VideoClip make_pan_clip(int width, int height, int frames, int speed, std::uint64_t seed);

struct RdPoint {
  double lambda = 0, epsilon = 0;
  double bpp_clean = 0, psnr_clean = 0;
  double bpp_adv = 0, psnr_adv = 0;
  double bpp_noise = 0, psnr_noise = 0;
};

struct RdSweepResult {
  std::vector<RdPoint> rows;  // sorted by (lambda, epsilon)
  std::filesystem::path csv_path;
};

// Per (lambda, epsilon): offline attack on every dataset clip plus a
// uniform-noise baseline at the same budget; row values are clip means.
RdSweepResult run_rd_sweep(const ExperimentSpec& spec);

struct AsrRow {
  std::string kind;       // "attack" or "baseline"
  std::string attack;     // offline / online / uniform-noise
  std::string type;       // "T" or "U"
  std::string surrogate;  // "-" or the surrogate tag
  double asr = 0;
  double clean_acc = 0;
};

struct AsrTableResult {
  std::vector<AsrRow> rows;
  std::filesystem::path csv_path;
};

// Trains a victim (grid victim_grid) and a surrogate (grid surrogate_grid)
// on the train split; emits offline-targeted, offline-untargeted and
// online-transfer attack rows plus a uniform-noise baseline row, with the
// victim's clean accuracy alongside. Targeted attacks aim at
// (label + 1) mod classes.
AsrTableResult run_asr_table(const ExperimentSpec& spec);

struct OnsetRow {
  int frame = 0;
  char frame_type = 'I';
  double bits = 0;
  double psnr = 0;
};

struct OnsetTraceResult {
  std::vector<OnsetRow> attacked;
  std::vector<OnsetRow> clean;
  std::filesystem::path attacked_csv;
  std::filesystem::path clean_csv;
};

// Encodes the clip twice: clean, and with the perturbation applied only from
// onset_frame onward (tiled cyclically, optionally realized through the
// channel first). Rows carry per-frame bits and PSNR against the clean input.
OnsetTraceResult run_onset_trace(const ExperimentSpec& spec);

struct ConvergenceResult {
  std::vector<IterationStat> rows;  // iteration 0 = clean metrics
  std::filesystem::path csv_path;
};

// Offline attack on one clip, logging per accepted iteration: PSNR, bpp,
// clean-class probability, thickness, roughness and the total objective.
ConvergenceResult run_convergence(const ExperimentSpec& spec);

struct UniversalEvalResult {
  FlickerPerturbation delta;
  double mean_objective_universal = 0;
  double mean_objective_noise = 0;
  double mean_psnr_drop_universal = 0;
  double mean_psnr_drop_noise = 0;
  std::vector<double> objective_by_offset;  // holdout mean per offset in [0, G)
  std::filesystem::path csv_path;
  std::filesystem::path offsets_csv_path;
};

// Trains a universal perturbation on a train split, then scores it on the
// held-out clips against a uniform-noise baseline of the same budget and
// across every evaluation offset.
UniversalEvalResult run_universal_eval(const ExperimentSpec& spec);

}  // namespace flicklab
