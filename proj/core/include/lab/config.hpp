#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lab/anchoring.hpp"
#include "lab/diffusion.hpp"
#include "lab/eval.hpp"
#include "lab/shapes_world.hpp"

namespace lab::harness {

using Json = nlohmann::json;

struct ModelSection {
  int T = 200;
  diffusion::DenoiserArch arch;
  diffusion::TrainConfig train;  // seed is derived from the run seed
};

struct OracleSection {
  std::size_t n_samples = 5000;
  std::size_t n_holdout = 2000;
  eval::OracleTrainConfig train;
  double min_accuracy = 0.99;
};

/// Settings of one discovered vector; seeds derive from the run seed.
struct AnchorSection {
  std::vector<std::string> base_prompts;
  std::string target_concept;
  anchoring::TargetMode mode = anchoring::TargetMode::AwayFrom;
  double w = 3.0;
  int epochs = 5;
  double lr = 0.05;
  int steps = 50;
  anchoring::VectorKind kind = anchoring::VectorKind::LowRank;
};

/// One Towards vector per target, all sharing the base prompts. The fair
/// denoiser is trained on the data section with shape_bias substituted.
struct FairSection {
  std::array<double, 2> shape_bias{0.9, 0.1};
  std::vector<std::string> base_prompts;
  std::vector<std::string> targets;
  double w = 3.0;
  int epochs = 5;
  double lr = 0.05;
  /// Oracle shape label each target should produce, in target order.
  std::vector<std::string> attributes;
};

struct VectorRef {
  std::string path;
  double beta = 1.0;
};

struct SteeringSection {
  std::string mode = "fixed";  // fixed | fair_sample
  std::vector<VectorRef> vectors;
  int warm_up_step = 15;
  std::vector<std::string> fair_vectors;
};

struct SamplerSection {
  int steps = 50;
  double guidance_scale = 4.0;
};

struct EvalSection {
  int n_images = 100;
  std::vector<std::string> unsafe_prompts;
  std::vector<std::string> neutral_prompts;
  std::vector<std::string> fair_prompts;
  int fair_images = 200;
  std::vector<double> betas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<int> warm_up_steps{0, 5, 10, 15, 20, 25, 30, 35, 40, 50};
  double min_alignment = 0.90;
};

/// Explicit artifact locations. When set they must exist; when unset the
/// artifact lives under --out and is rebuilt if missing or stale.
struct PathsSection {
  std::optional<std::string> dataset;
  std::optional<std::string> denoiser;
  std::optional<std::string> oracle;
  std::optional<std::string> vector;
};

struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  world::DatasetSpec data;
  ModelSection model;
  OracleSection oracle;
  AnchorSection anchor;
  FairSection fair;
  SteeringSection steering;
  SamplerSection sampler;
  EvalSection eval;
  PathsSection paths;

  /// Fully resolved document (defaults filled in), keys sorted.
  Json canonical() const;
  /// SHA-256 hex of canonical().dump().
  std::string digest() const;
};

/// Strict: unknown keys fail with UnknownKey, wrong types with ConfigError.
RunConfig parse_config(const Json& doc);
RunConfig load_config(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
/// Digest of an arbitrary JSON value's canonical (sorted, compact) dump.
std::string json_digest(const Json& value);

/// Component seeds, all derived from the run seed.
enum class SeedTag : std::uint64_t {
  Data = 1,
  TextEncoder,
  Denoiser,
  DenoiserM2,
  OracleData,
  OracleHoldout,
  Oracle,
  Anchor,
  Fair,
  Generate,
  Combination,
};
std::uint64_t component_seed(const RunConfig& cfg, SeedTag tag);

anchoring::AnchorConfig anchor_config(const RunConfig& cfg, const AnchorSection& s,
                                      std::uint64_t seed);

}  // namespace lab::harness
