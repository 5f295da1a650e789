#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lab/anchoring.hpp"
#include "lab/checkpoint.hpp"
#include "lab/config.hpp"
#include "lab/diffusion.hpp"
#include "lab/eval.hpp"
#include "lab/steering.hpp"
#include "lab/textenc.hpp"

namespace lab::harness {

namespace fs = std::filesystem;

/// Settings shared by every step of one CLI invocation.
struct Context {
  RunConfig cfg;
  std::string digest;  // cfg.digest()
  fs::path out;
  int threads = 1;
  std::function<void(const std::string&)> log;

  Context(RunConfig config, fs::path out_dir, int n_threads = 1);
  void note(const std::string& line) const;
};

// Metrics CSV ---------------------------------------------------------------

struct MetricRow {
  std::string run_id;
  std::string metric;
  double value = 0.0;
  std::int64_t n = 0;
  std::string config_digest;
};

/// Shortest round-trip decimal form, so CSVs are exact and byte-stable.
std::string format_value(double v);
std::string metrics_csv(std::span<const MetricRow> rows);
std::vector<MetricRow> parse_metrics_csv(const std::string& text);
void write_metrics(const fs::path& path, std::span<const MetricRow> rows);

/// Summary over every metrics/*.csv file, one row per (experiment, metric).
std::string report_csv(const fs::path& metrics_dir);

// Images --------------------------------------------------------------------

/// [-1, 1] -> [0, 255], rounded to nearest, clamped.
std::uint8_t pixel_byte(float v);
/// Binary P6 with a "# config_digest <hex>" comment line.
std::string encode_ppm(const world::Pixels& image, const std::string& config_digest);

// Persistent artifacts ----------------------------------------------------

/// Tensor entries named "meta:<key>:<value>" (empty payload) carry strings.
void put_meta(io::NamedTensors& t, const std::string& key, const std::string& value);
std::optional<std::string> get_meta(const io::NamedTensors& t, const std::string& key);

/// Blob: "pixels" N x 768 and "attrs" N x 4 (shape, hue, marker, template).
io::NamedTensors dataset_tensors(std::span<const world::ImageSample> data);
std::vector<world::ImageSample> dataset_from_tensors(const io::NamedTensors& t);
/// index,shape,hue,marker,caption
std::string dataset_manifest(std::span<const world::ImageSample> data);

struct Model {
  diffusion::DenoiserParams denoiser;
  textenc::TextEncoderParams text;
};
io::NamedTensors model_tensors(const Model& m);
Model model_from_tensors(const io::NamedTensors& t);

io::NamedTensors vector_tensors(const anchoring::DirectionVector& d);
anchoring::DirectionVector vector_from_tensors(const io::NamedTensors& t);

io::NamedTensors oracle_tensors(const eval::OracleParams& o);
eval::OracleParams oracle_from_tensors(const io::NamedTensors& t);

// Artifact store ----------------------------------------------------------

/// M1: main world. M2: retrained from another seed with M1's text encoder
/// frozen. Fair: shape-biased world.
enum class ModelVariant { M1, M2, Fair };
std::string_view name(ModelVariant v);

/// Loads artifacts from --out, rebuilding any that are missing or were built
/// from different settings. Explicit config paths are loaded as given.
class Artifacts {
 public:
  explicit Artifacts(const Context& ctx);

  world::DatasetSpec data_spec(ModelVariant v) const;
  std::vector<world::ImageSample> dataset(ModelVariant v);
  const Model& model(ModelVariant v);
  const eval::OracleParams& oracle();
  /// Held-out accuracy of the oracle per head (shape, hue, marker).
  std::array<double, 3> oracle_accuracy();

  /// The anchor-section vector; kind overrides the configured kind.
  const anchoring::DirectionVector& safe_vector(std::optional<anchoring::VectorKind> kind = {});
  /// One Towards vector per fair target, discovered on the fair model.
  const std::vector<anchoring::DirectionVector>& fair_vectors();
  /// A second safe vector from an independent seed.
  const anchoring::DirectionVector& second_vector();

  fs::path dataset_path(ModelVariant v) const;
  fs::path model_path(ModelVariant v) const;
  fs::path oracle_path() const;
  fs::path vector_path(const std::string& name) const;

 private:
  std::string model_digest(ModelVariant v) const;
  const anchoring::DirectionVector& discover_cached(const std::string& file,
                                                    const anchoring::AnchorConfig& ac,
                                                    const std::string& digest,
                                                    ModelVariant on);

  const Context& ctx_;
  std::map<ModelVariant, Model> models_;
  std::optional<eval::OracleParams> oracle_;
  std::optional<std::array<double, 3>> oracle_acc_;
  std::map<std::string, anchoring::DirectionVector> vectors_;
  std::optional<std::vector<anchoring::DirectionVector>> fair_;
};

// Generation --------------------------------------------------------------

/// prompts[i % size] for i < n.
std::vector<std::string> cycle_prompts(std::span<const std::string> prompts, int n);
/// Per-image sampler seeds, shared by every condition of an experiment.
std::vector<std::uint64_t> image_seeds(const RunConfig& cfg, int n, std::uint64_t stream = 0);

/// One image per (prompt, seed) pair; output order matches input order for
/// any thread count.
std::vector<world::Pixels> generate_images(const Model& model, std::span<const std::string> prompts,
                                           std::span<const std::uint64_t> seeds,
                                           const steering::SteeringPlan& plan,
                                           const SamplerSection& sampler, int threads);

/// Plan from the steering section; vector paths are loaded from disk.
steering::SteeringPlan plan_from_config(const RunConfig& cfg);

// Experiments -------------------------------------------------------------

const std::vector<std::string>& experiment_names();
/// Runs one named recipe and returns its metric rows.
std::vector<MetricRow> run_experiment(const std::string& name, Artifacts& artifacts,
                                      const Context& ctx);
/// Baseline and steered metrics for the configured plan.
std::vector<MetricRow> run_evaluate(Artifacts& artifacts, const Context& ctx);

}  // namespace lab::harness
