#include <benchmark/benchmark.h>

#include "flicklab/attack.hpp"
#include "flicklab/classifier.hpp"
#include "flicklab/codec.hpp"
#include "flicklab/experiments.hpp"
#include "flicklab/flicker.hpp"

namespace {

using namespace flicklab;

VideoClip bench_clip(int frames) {
  SyntheticDatasetConfig cfg;
  cfg.clips_per_class = 1;
  cfg.frames = frames;
  cfg.speed = 1;
  cfg.seed = 11;
  return generate_dataset(cfg).front().clip;
}

CodecConfig bench_codec(RateMode mode) {
  CodecConfig cfg;
  cfg.block_size = 4;
  cfg.mode = mode;
  return cfg;
}

void BM_TransformRoundTrip(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::vector<double> block(static_cast<std::size_t>(n) * n, 0.5);
  std::vector<double> coeffs(block.size());
  for (auto _ : state) {
    forward_transform_block(block, coeffs, n);
    inverse_transform_block(coeffs, block, n);
    benchmark::DoNotOptimize(block.data());
  }
}
BENCHMARK(BM_TransformRoundTrip)->Arg(4)->Arg(8);

void BM_BlockMatch(benchmark::State& state) {
  const VideoClip clip = bench_clip(2);
  const CodecConfig cfg = bench_codec(RateMode::hard);
  for (auto _ : state) {
    MotionField field = block_match(clip.frames[0], clip.frames[1], cfg);
    benchmark::DoNotOptimize(field.vectors.data());
  }
}
BENCHMARK(BM_BlockMatch);

void BM_EncodeFrameHard(benchmark::State& state) {
  const VideoClip clip = bench_clip(2);
  const CodecConfig cfg = bench_codec(RateMode::hard);
  ReferenceBuffer refs;
  refs.push(encode_frame(clip.frames[0], refs, cfg).decoded);
  for (auto _ : state) {
    EncodedFrame encoded = encode_frame(clip.frames[1], refs, cfg);
    benchmark::DoNotOptimize(encoded.stream.total_bits);
  }
}
BENCHMARK(BM_EncodeFrameHard);

void BM_EncodeFrameSmooth(benchmark::State& state) {
  const VideoClip clip = bench_clip(2);
  const CodecConfig cfg = bench_codec(RateMode::smooth);
  ReferenceBuffer refs;
  refs.push(encode_frame(clip.frames[0], refs, cfg).decoded);
  for (auto _ : state) {
    EncodedFrame encoded = encode_frame(clip.frames[1], refs, cfg);
    benchmark::DoNotOptimize(encoded.stream.total_bits);
  }
}
BENCHMARK(BM_EncodeFrameSmooth);

void BM_EncodeClip(benchmark::State& state) {
  const VideoClip clip = bench_clip(10);
  const CodecConfig cfg = bench_codec(RateMode::hard);
  for (auto _ : state) {
    CodedClip coded = encode_clip(clip, cfg, clip);
    benchmark::DoNotOptimize(coded.bpp);
  }
}
BENCHMARK(BM_EncodeClip);

void BM_Roughness(benchmark::State& state) {
  const FlickerPerturbation delta = sample_uniform_flicker(30, 3, 0.2, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(r_rough(delta));
  }
}
BENCHMARK(BM_Roughness);

void BM_OfflineAttackIteration(benchmark::State& state) {
  const VideoClip clip = bench_clip(10);
  AttackConfig cfg;
  cfg.iterations = 1;
  cfg.epsilon = 0.2;
  for (auto _ : state) {
    AttackReport report = attack_offline(clip, cfg, bench_codec(RateMode::hard));
    benchmark::DoNotOptimize(report.adv_bpp);
  }
}
BENCHMARK(BM_OfflineAttackIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
