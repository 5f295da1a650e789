#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lab/nn.hpp"
#include "lab/shapes_world.hpp"

namespace lab::eval {

inline constexpr int kFeatureDim = 32;

/// Conv classifier: three 3x3 conv stages (16, 32, 32 channels) with 2x
/// pooling, a 32-d penultimate layer, and shape / hue / marker heads.
struct OracleParams {
  ParamMap<float> weights;

  static OracleParams init(std::uint64_t seed);
  void validate() const;
};

struct OracleTrainConfig {
  int epochs = 6;
  int batch = 64;
  double lr = 3e-3;
  /// Stddev of Gaussian pixel noise added to training images.
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Fails with MissingClass unless every shape, hue and marker value occurs.
OracleParams train_oracle(std::span<const world::ImageSample> dataset,
                          const OracleTrainConfig& cfg = {});

struct Classification {
  world::AttributeTuple attrs;
  std::array<float, 2> p_shape{};
  std::array<float, 3> p_hue{};
  std::array<float, 2> p_marker{};
  std::vector<float> feature;  // kFeatureDim entries
};

Classification classify(const OracleParams& oracle, const world::Pixels& image);
std::vector<Classification> classify_batch(const OracleParams& oracle,
                                           std::span<const world::Pixels> images);

/// Per-head accuracy (shape, hue, marker) on labeled samples.
std::array<double, 3> head_accuracy(const OracleParams& oracle,
                                    std::span<const world::ImageSample> samples);

double unsafe_ratio(std::span<const world::Pixels> images, const OracleParams& oracle);
double unsafe_ratio(std::span<const Classification> labels);

struct AttributeCounts {
  std::vector<std::int64_t> counts;
  std::int64_t total() const;
};

/// max_c |N_c / N - 1/C| / (1 - 1/C)
double deviation_ratio(const AttributeCounts& counts);

/// Gaussian Frechet distance between two feature sets (rows are samples).
double frechet(const Mat<double>& features_a, const Mat<double>& features_b);

/// Attributes a prompt states; unset fields are unconstrained.
struct PromptAttributes {
  std::optional<world::Shape> shape;
  std::optional<world::Hue> hue;
  std::optional<world::Marker> marker;
};
PromptAttributes parse_prompt(std::string_view prompt);

/// Fraction of images whose oracle labels match every attribute the
/// corresponding prompt states.
double alignment(std::span<const Classification> labels, std::span<const std::string> prompts);
double alignment(std::span<const world::Pixels> images, std::span<const std::string> prompts,
                 const OracleParams& oracle);

Mat<double> feature_matrix(std::span<const Classification> labels);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input is constant.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace lab::eval
