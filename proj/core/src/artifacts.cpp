#include <chrono>
#include <cstdio>

#include "lab/error.hpp"
#include "lab/harness.hpp"

namespace lab::harness {

std::string_view name(ModelVariant v) {
  switch (v) {
    case ModelVariant::M1: return "m1";
    case ModelVariant::M2: return "m2";
    case ModelVariant::Fair: return "fair";
  }
  return "?";
}

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// The checkpoint at path when it exists and was built from `digest`.
std::optional<io::NamedTensors> load_if_current(const fs::path& path, const std::string& digest) {
  if (!fs::exists(path)) return std::nullopt;
  auto t = io::load_checkpoint(path);
  if (get_meta(t, "digest") != digest) return std::nullopt;
  return t;
}

void save_with_digest(io::NamedTensors t, const fs::path& path, const std::string& digest) {
  put_meta(t, "digest", digest);
  fs::create_directories(path.parent_path());
  io::save_checkpoint(t, path);
}

io::NamedTensors load_explicit(const std::string& path, const char* what) {
  require(fs::exists(path), Errc::MissingPrerequisite, std::string(what) + " checkpoint not found: " + path);
  return io::load_checkpoint(path);
}

Json anchor_json(const AnchorSection& a) {
  return Json{{"base_prompts", a.base_prompts},
              {"target_concept", a.target_concept},
              {"mode", anchoring::name(a.mode)},
              {"w", a.w},
              {"epochs", a.epochs},
              {"lr", a.lr},
              {"steps", a.steps},
              {"kind", anchoring::name(a.kind)}};
}

}  // namespace

Artifacts::Artifacts(const Context& ctx) : ctx_(ctx) {}

fs::path Artifacts::dataset_path(ModelVariant v) const {
  if (v == ModelVariant::M1 && ctx_.cfg.paths.dataset) return *ctx_.cfg.paths.dataset;
  return ctx_.out / "data" / (std::string("dataset_") + std::string(name(v == ModelVariant::M2 ? ModelVariant::M1 : v)) + ".lalb");
}

fs::path Artifacts::model_path(ModelVariant v) const {
  if (v == ModelVariant::M1 && ctx_.cfg.paths.denoiser) return *ctx_.cfg.paths.denoiser;
  return ctx_.out / "models" / ("denoiser_" + std::string(name(v)) + ".lalb");
}

fs::path Artifacts::oracle_path() const {
  if (ctx_.cfg.paths.oracle) return *ctx_.cfg.paths.oracle;
  return ctx_.out / "models" / "oracle.lalb";
}

fs::path Artifacts::vector_path(const std::string& file) const {
  return ctx_.out / "vectors" / (file + ".lalb");
}

world::DatasetSpec Artifacts::data_spec(ModelVariant v) const {
  auto spec = ctx_.cfg.data;
  spec.seed = component_seed(ctx_.cfg, SeedTag::Data);
  if (v == ModelVariant::Fair) spec.shape_bias = ctx_.cfg.fair.shape_bias;
  return spec;
}

std::vector<world::ImageSample> Artifacts::dataset(ModelVariant v) {
  if (v == ModelVariant::M1 && ctx_.cfg.paths.dataset)
    return dataset_from_tensors(load_explicit(*ctx_.cfg.paths.dataset, "dataset"));
  return world::make_dataset(data_spec(v));
}

std::string Artifacts::model_digest(ModelVariant v) const {
  const auto& c = ctx_.cfg;
  const auto canon = c.canonical();
  const auto spec = data_spec(v == ModelVariant::M2 ? ModelVariant::M1 : v);
  Json j{{"variant", name(v)},
         {"seed", c.seed},
         {"data",
          {{"n_samples", spec.n_samples},
           {"marker_bias", spec.marker_bias},
           {"shape_bias", spec.shape_bias},
           {"hue_bias", spec.hue_bias}}},
         {"model", canon["model"]},
         {"dataset_path", c.paths.dataset ? Json(*c.paths.dataset) : Json(nullptr)},
         {"denoiser_path", c.paths.denoiser ? Json(*c.paths.denoiser) : Json(nullptr)}};
  if (v == ModelVariant::M2) j["text_encoder_from"] = model_digest(ModelVariant::M1);
  return json_digest(j);
}

const Model& Artifacts::model(ModelVariant v) {
  if (auto it = models_.find(v); it != models_.end()) return it->second;
  const auto& c = ctx_.cfg;
  if (v == ModelVariant::M1 && c.paths.denoiser) {
    return models_[v] = model_from_tensors(load_explicit(*c.paths.denoiser, "denoiser"));
  }
  const auto path = model_path(v);
  const auto digest = model_digest(v);
  if (auto t = load_if_current(path, digest)) return models_[v] = model_from_tensors(*t);

  ctx_.note("training denoiser " + std::string(name(v)) + " -> " + path.string());
  auto train = c.model.train;
  textenc::TextEncoderParams text;
  if (v == ModelVariant::M2) {
    text = model(ModelVariant::M1).text;
    train.train_text_encoder = false;
    train.seed = component_seed(c, SeedTag::DenoiserM2);
  } else {
    text = textenc::TextEncoderParams::init(component_seed(c, SeedTag::TextEncoder));
    train.seed = component_seed(c, SeedTag::Denoiser);
  }
  const auto data = dataset(v);
  const auto t0 = clock_type::now();
  auto result = diffusion::train_denoiser(data, text, c.model.arch, c.model.T, train,
                                          [&](int step, int total, double loss) {
                                            if (step % 500 == 0 || step + 1 == total)
                                              ctx_.note("  step " + std::to_string(step) + "/" +
                                                        std::to_string(total) + " loss " +
                                                        fixed(loss, 4) + "  " +
                                                        fixed(seconds_since(t0), 1) + "s");
                                          });
  Model m{std::move(result.denoiser), std::move(result.text_encoder)};
  save_with_digest(model_tensors(m), path, digest);
  return models_[v] = std::move(m);
}

const eval::OracleParams& Artifacts::oracle() {
  if (oracle_) return *oracle_;
  const auto& c = ctx_.cfg;
  if (c.paths.oracle) return oracle_.emplace(oracle_from_tensors(load_explicit(*c.paths.oracle, "oracle")));
  const auto path = oracle_path();
  const auto digest = json_digest(Json{{"seed", c.seed}, {"oracle", c.canonical()["oracle"]}});
  if (auto t = load_if_current(path, digest)) return oracle_.emplace(oracle_from_tensors(*t));

  ctx_.note("training oracle -> " + path.string());
  world::DatasetSpec spec;
  spec.n_samples = c.oracle.n_samples;
  spec.seed = component_seed(c, SeedTag::OracleData);
  auto cfg = c.oracle.train;
  cfg.seed = component_seed(c, SeedTag::Oracle);
  const auto t0 = clock_type::now();
  auto o = eval::train_oracle(world::make_dataset(spec), cfg);
  ctx_.note("  oracle trained in " + fixed(seconds_since(t0), 1) + "s");
  save_with_digest(oracle_tensors(o), path, digest);
  return oracle_.emplace(std::move(o));
}

std::array<double, 3> Artifacts::oracle_accuracy() {
  if (oracle_acc_) return *oracle_acc_;
  world::DatasetSpec spec;
  spec.n_samples = ctx_.cfg.oracle.n_holdout;
  spec.seed = component_seed(ctx_.cfg, SeedTag::OracleHoldout);
  return *(oracle_acc_ = eval::head_accuracy(oracle(), world::make_dataset(spec)));
}

const anchoring::DirectionVector& Artifacts::discover_cached(const std::string& file,
                                                             const anchoring::AnchorConfig& ac,
                                                             const std::string& digest,
                                                             ModelVariant on) {
  if (auto it = vectors_.find(file); it != vectors_.end()) return it->second;
  const auto path = vector_path(file);
  if (auto t = load_if_current(path, digest)) return vectors_[file] = vector_from_tensors(*t);

  const auto& m = model(on);
  ctx_.note("discovering " + file + " (\"" + ac.target_concept + "\", " +
            std::string(anchoring::name(ac.mode)) + ") -> " + path.string());
  double sum = 0.0;
  int count = 0;
  const int m_prompts = static_cast<int>(ac.base_prompts.size());
  auto result = anchoring::discover(m.denoiser, m.text, ac, [&](const anchoring::DiscoverStep& s) {
    sum += s.loss;
    ++count;
    if (s.prompt == m_prompts - 1 && s.step == ac.steps - 1) {
      ctx_.note("  epoch " + std::to_string(s.epoch) + " mean loss " + fixed(sum / count, 4));
      sum = 0.0;
      count = 0;
    }
  });
  result.vector.meta.config_digest = ctx_.digest;
  save_with_digest(vector_tensors(result.vector), path, digest);
  return vectors_[file] = std::move(result.vector);
}

const anchoring::DirectionVector& Artifacts::safe_vector(std::optional<anchoring::VectorKind> kind) {
  const auto& c = ctx_.cfg;
  const auto k = kind.value_or(c.anchor.kind);
  if (k == c.anchor.kind && c.paths.vector) {
    if (auto it = vectors_.find("explicit"); it != vectors_.end()) return it->second;
    return vectors_["explicit"] = vector_from_tensors(load_explicit(*c.paths.vector, "vector"));
  }
  AnchorSection s = c.anchor;
  s.kind = k;
  const auto seed = component_seed(c, SeedTag::Anchor);
  const auto digest = json_digest(
      Json{{"model", model_digest(ModelVariant::M1)}, {"anchor", anchor_json(s)}, {"seed", seed}});
  return discover_cached("safe_" + std::string(anchoring::name(k)), anchor_config(c, s, seed), digest,
                         ModelVariant::M1);
}

const anchoring::DirectionVector& Artifacts::second_vector() {
  const auto& c = ctx_.cfg;
  const auto seed = component_seed(c, SeedTag::Combination);
  const auto digest = json_digest(
      Json{{"model", model_digest(ModelVariant::M1)}, {"anchor", anchor_json(c.anchor)}, {"seed", seed}});
  return discover_cached("safe_second", anchor_config(c, c.anchor, seed), digest, ModelVariant::M1);
}

const std::vector<anchoring::DirectionVector>& Artifacts::fair_vectors() {
  if (fair_) return *fair_;
  const auto& c = ctx_.cfg;
  std::vector<anchoring::DirectionVector> out;
  for (std::size_t i = 0; i < c.fair.targets.size(); ++i) {
    AnchorSection s;
    s.base_prompts = c.fair.base_prompts;
    s.target_concept = c.fair.targets[i];
    s.mode = anchoring::TargetMode::Towards;
    s.w = c.fair.w;
    s.epochs = c.fair.epochs;
    s.lr = c.fair.lr;
    s.steps = c.anchor.steps;
    s.kind = anchoring::VectorKind::LowRank;
    const auto seed = derive_seed(component_seed(c, SeedTag::Fair), i);
    const auto digest = json_digest(
        Json{{"model", model_digest(ModelVariant::Fair)}, {"anchor", anchor_json(s)}, {"seed", seed}});
    out.push_back(discover_cached("fair_" + c.fair.attributes[i], anchor_config(c, s, seed), digest,
                                  ModelVariant::Fair));
  }
  return *(fair_ = std::move(out));
}

}  // namespace lab::harness
