#include <benchmark/benchmark.h>

#include "lab/anchoring.hpp"
#include "lab/diffusion.hpp"
#include "lab/eval.hpp"
#include "lab/rng.hpp"
#include "lab/steering.hpp"
#include "lab/textenc.hpp"

namespace {

using namespace lab;

// Full-size model, as used by the experiments.
const diffusion::DenoiserParams& model() {
  static const auto p = diffusion::DenoiserParams::init(diffusion::DenoiserArch{}, 200, 1);
  return p;
}

const textenc::TextEncoderParams& text() {
  static const auto p = textenc::TextEncoderParams::init(2);
  return p;
}

void BM_Encode(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(textenc::encode_text("a tainted blue square", text()));
}
BENCHMARK(BM_Encode);

void BM_PredictNoisePair(benchmark::State& state) {
  const auto cond = textenc::encode_text("a red circle", text());
  const auto z = diffusion::initial_latent(3);
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::predict_noise_pair(model(), z, 100, cond));
}
BENCHMARK(BM_PredictNoisePair);

void BM_Sample(benchmark::State& state) {
  const auto cond = textenc::encode_text("a red circle", text());
  const diffusion::SamplerConfig cfg{static_cast<int>(state.range(0)), 4.0, 7};
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::sample(model(), cond, cfg));
}
BENCHMARK(BM_Sample)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_GuidedSample(benchmark::State& state) {
  const auto cond = textenc::encode_text("a tainted red circle", text());
  steering::SteeringPlan plan;
  plan.entries = {{anchoring::DirectionVector::low_rank(4), 1.0}};
  const diffusion::SamplerConfig cfg{50, 4.0, 7};
  for (auto _ : state) benchmark::DoNotOptimize(steering::guided_sample(model(), cond, plan, cfg));
}
BENCHMARK(BM_GuidedSample)->Unit(benchmark::kMillisecond);

void BM_LossGradient(benchmark::State& state) {
  const auto kind = state.range(0) == 0 ? anchoring::VectorKind::LowRank : anchoring::VectorKind::Dense;
  Rng rng(5);
  anchoring::AnchorProblem<float> problem;
  problem.denoiser = &model().weights;
  problem.z_t = diffusion::initial_latent(6);
  problem.t = 120;
  problem.prompt = textenc::encode_text("a tainted shape", text()).rows;
  problem.target = normal_matrix<float>(rng, 3, 256, 1.0);
  const auto d = kind == anchoring::VectorKind::LowRank
                     ? anchoring::DirectionVector::low_rank(8)
                     : anchoring::DirectionVector::dense(Mat<float>::Zero(textenc::kSeqLen, textenc::kDim));
  for (auto _ : state) benchmark::DoNotOptimize(anchoring::loss_gradient(problem, kind, d.params));
}
BENCHMARK(BM_LossGradient)->Arg(0)->Arg(1);

void BM_Frechet(benchmark::State& state) {
  Rng rng(9);
  const auto a = normal_matrix<double>(rng, state.range(0), 32, 1.0);
  const auto b = normal_matrix<double>(rng, state.range(0), 32, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(eval::frechet(a, b));
}
BENCHMARK(BM_Frechet)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
