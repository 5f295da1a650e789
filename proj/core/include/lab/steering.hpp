#pragma once

#include <span>
#include <string>
#include <vector>

#include "lab/anchoring.hpp"
#include "lab/diffusion.hpp"

namespace lab::steering {

struct SteeringEntry {
  anchoring::DirectionVector vector;
  double beta = 1.0;
};

enum class PlanMode { Fixed, FairSample };

/// Fixed: P_c + sum(beta_i d_i) from reverse step warm_up_step onward.
/// FairSample: one vector drawn uniformly per image, added with beta 1 from
/// step 0.
struct SteeringPlan {
  PlanMode mode = PlanMode::Fixed;
  std::vector<SteeringEntry> entries;
  int warm_up_step = 15;
  std::vector<anchoring::DirectionVector> fair_set;

  /// Throws on invalid plans; returns advisory warnings.
  std::vector<std::string> validate(int steps) const;
};

textenc::PromptEmbedding apply_direction(const textenc::PromptEmbedding& prompt,
                                         const anchoring::DirectionVector& d, double beta);

/// sum_i beta_i materialize(d_i); the zero matrix for an empty list.
Mat<float> combine(std::span<const SteeringEntry> entries);

/// Uniform index into a set of the given size; advances rng.
std::size_t sample_fair_index(std::size_t set_size, Rng& rng);
const anchoring::DirectionVector& sample_fair_vector(
    std::span<const anchoring::DirectionVector> set, Rng& rng);

/// Seed of the per-image generator FairSample draws from.
std::uint64_t fair_seed(std::uint64_t image_seed);

/// sample() with the plan's condition schedule.
Mat<float> guided_sample(const diffusion::DenoiserParams& params,
                         const textenc::PromptEmbedding& prompt, const SteeringPlan& plan,
                         const diffusion::SamplerConfig& cfg);

}  // namespace lab::steering
