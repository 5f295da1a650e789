#include "lab/steering.hpp"

#include <cmath>

#include "lab/error.hpp"

namespace lab::steering {

std::vector<std::string> SteeringPlan::validate(int steps) const {
  std::vector<std::string> warnings;
  if (mode == PlanMode::FairSample) {
    if (fair_set.empty()) fail(Errc::EmptySet, "fair-sample plan has no vectors");
    for (const auto& d : fair_set) d.validate();
    return warnings;
  }
  require(warm_up_step >= 0 && warm_up_step <= steps, Errc::ConfigError,
          "warm_up_step must lie in [0, " + std::to_string(steps) + "]");
  for (const auto& e : entries) {
    e.vector.validate();
    require(std::isfinite(e.beta), Errc::ConfigError, "beta must be finite");
  }
  if (warm_up_step > 2 * steps / 3)
    warnings.push_back("warm_up_step " + std::to_string(warm_up_step) + " is past 2/3 of " +
                       std::to_string(steps) + " steps; the vector will barely act");
  return warnings;
}

textenc::PromptEmbedding apply_direction(const textenc::PromptEmbedding& prompt,
                                         const anchoring::DirectionVector& d, double beta) {
  const Mat<float> m = anchoring::materialize(d);
  require(prompt.rows.rows() == m.rows() && prompt.rows.cols() == m.cols(), Errc::ShapeMismatch,
          "apply_direction: prompt and vector differ in shape");
  return {prompt.rows + static_cast<float>(beta) * m};
}

Mat<float> combine(std::span<const SteeringEntry> entries) {
  Mat<float> acc = Mat<float>::Zero(textenc::kSeqLen, textenc::kDim);
  for (const auto& e : entries) {
    const Mat<float> m = anchoring::materialize(e.vector);
    require(m.rows() == acc.rows() && m.cols() == acc.cols(), Errc::ShapeMismatch,
            "combine: vectors differ in shape");
    acc += static_cast<float>(e.beta) * m;
  }
  return acc;
}

std::size_t sample_fair_index(std::size_t set_size, Rng& rng) {
  if (set_size == 0) fail(Errc::EmptySet, "cannot draw from an empty vector set");
  return static_cast<std::size_t>(uniform_index(rng, set_size));
}

const anchoring::DirectionVector& sample_fair_vector(
    std::span<const anchoring::DirectionVector> set, Rng& rng) {
  return set[sample_fair_index(set.size(), rng)];
}

std::uint64_t fair_seed(std::uint64_t image_seed) { return derive_seed(image_seed, 0xfa1); }

Mat<float> guided_sample(const diffusion::DenoiserParams& params,
                         const textenc::PromptEmbedding& prompt, const SteeringPlan& plan,
                         const diffusion::SamplerConfig& cfg) {
  cfg.validate(params.T);
  plan.validate(cfg.steps);
  if (plan.mode == PlanMode::FairSample) {
    Rng rng(fair_seed(cfg.seed));
    const auto steered = apply_direction(prompt, sample_fair_vector(plan.fair_set, rng), 1.0);
    return diffusion::sample(params, steered, cfg);
  }
  const textenc::PromptEmbedding steered{prompt.rows + combine(plan.entries)};
  const int w_s = plan.warm_up_step;
  return diffusion::sample_with(
      params,
      [&](int k) -> const textenc::PromptEmbedding& { return k < w_s ? prompt : steered; }, cfg);
}

}  // namespace lab::steering
