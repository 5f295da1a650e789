#include "lab/config.hpp"

#include <fstream>
#include <set>

#include <openssl/evp.h>

#include "lab/error.hpp"

namespace lab::harness {

namespace {

std::vector<std::string> attribute_prompts(const std::string& prefix) {
  std::vector<std::string> out;
  for (auto h : world::kHues)
    for (auto s : world::kShapes)
      out.push_back(prefix + std::string(world::name(h)) + " " + std::string(world::name(s)));
  return out;
}

/// Generic and attribute-bearing prompts alternate so the final optimizer
/// steps of an epoch do not all come from one template.
std::vector<std::string> default_safe_prompts() {
  const auto specific = attribute_prompts("a tainted ");
  std::vector<std::string> p;
  for (std::size_t i = 0; i < specific.size(); ++i) {
    p.emplace_back(i % 2 == 0 ? "an image of tainted" : "a tainted shape");
    p.push_back(specific[i]);
  }
  return p;
}

/// Reads one JSON object, remembering which keys were consumed.
static_assert(std::is_same_v<std::size_t, std::uint64_t>, "64-bit size_t assumed");

class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(Errc::ConfigError, where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    convert(*it, out, where_ + "." + key);
  }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    auto it = j_.find(key);
    return Reader(it == j_.end() ? empty : *it, where_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(Errc::UnknownKey, "unknown key " + where_ + "." + it.key());
  }

 private:
  [[noreturn]] static void type_error(const std::string& where, const char* want) {
    fail(Errc::ConfigError, where + " must be " + want);
  }

  static void convert(const Json& v, std::string& out, const std::string& w) {
    if (!v.is_string()) type_error(w, "a string");
    out = v.get<std::string>();
  }
  static void convert(const Json& v, std::optional<std::string>& out, const std::string& w) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    std::string s;
    convert(v, s, w);
    out = s;
  }
  static void convert(const Json& v, double& out, const std::string& w) {
    if (!v.is_number()) type_error(w, "a number");
    out = v.get<double>();
  }
  static void convert(const Json& v, bool& out, const std::string& w) {
    if (!v.is_boolean()) type_error(w, "a boolean");
    out = v.get<bool>();
  }
  static void convert(const Json& v, int& out, const std::string& w) {
    if (!v.is_number_integer()) type_error(w, "an integer");
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) type_error(w, "a 32-bit integer");
    out = static_cast<int>(x);
  }
  static void convert(const Json& v, std::uint64_t& out, const std::string& w) {
    if (!v.is_number_unsigned()) type_error(w, "a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  template <class T>
  static void convert(const Json& v, std::vector<T>& out, const std::string& w) {
    if (!v.is_array()) type_error(w, "an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T item{};
      convert(v[i], item, w + "[" + std::to_string(i) + "]");
      out.push_back(std::move(item));
    }
  }
  template <std::size_t N>
  static void convert(const Json& v, std::array<double, N>& out, const std::string& w) {
    if (!v.is_array() || v.size() != N) type_error(w, ("an array of " + std::to_string(N) + " numbers").c_str());
    for (std::size_t i = 0; i < N; ++i) convert(v[i], out[i], w + "[" + std::to_string(i) + "]");
  }
  static void convert(const Json& v, VectorRef& out, const std::string& w) {
    Reader r(v, w);
    r.get("path", out.path);
    r.get("beta", out.beta);
    r.finish();
    if (out.path.empty()) fail(Errc::ConfigError, w + ".path is required");
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& msg) { require(ok, Errc::ConfigError, msg); }

void validate(const RunConfig& c) {
  check(!c.run_id.empty() && c.run_id.find_first_of(",\n\r\"") == std::string::npos,
        "run_id must be non-empty and free of commas, quotes and newlines");
  c.data.validate();
  check(c.model.T >= 2, "model.T must be at least 2");
  check(c.model.arch.c1 > 0 && c.model.arch.c2 > 0 && c.model.arch.c3 > 0 && c.model.arch.embed > 0,
        "model.arch widths must be positive");
  const auto& t = c.model.train;
  check(t.epochs >= 0 && t.batch > 0 && t.lr > 0, "model.train needs epochs >= 0, batch > 0, lr > 0");
  check(t.p_uncond >= 0 && t.p_uncond <= 1 && t.p_omit >= 0 && t.p_omit <= 1,
        "model.train probabilities must lie in [0, 1]");
  check(c.oracle.n_samples > 0 && c.oracle.n_holdout > 0, "oracle sample counts must be positive");
  check(c.oracle.train.epochs >= 0 && c.oracle.train.batch > 0 && c.oracle.train.lr > 0,
        "oracle training needs epochs >= 0, batch > 0, lr > 0");
  auto check_anchor = [&](const AnchorSection& a, const std::string& where) {
    check(!a.base_prompts.empty(), where + ".base_prompts must not be empty");
    check(a.w > 0, where + ".w must be > 0");
    check(a.epochs >= 0, where + ".epochs must be >= 0");
    check(a.lr > 0, where + ".lr must be > 0");
    check(a.steps >= 1 && a.steps <= c.model.T, where + ".steps must lie in [1, model.T]");
  };
  check_anchor(c.anchor, "anchor");
  check(!c.fair.base_prompts.empty(), "fair.base_prompts must not be empty");
  check(c.fair.targets.size() >= 2, "fair.targets needs at least two entries");
  check(c.fair.attributes.size() == c.fair.targets.size(), "fair.attributes must match fair.targets");
  for (const auto& a : c.fair.attributes)
    check(world::parse_shape(a).has_value(), "fair.attributes entries must be shape names");
  check(c.fair.w > 0 && c.fair.epochs >= 0 && c.fair.lr > 0, "fair needs w > 0, epochs >= 0, lr > 0");
  {
    world::DatasetSpec fair_world = c.data;
    fair_world.shape_bias = c.fair.shape_bias;
    fair_world.validate();
  }
  check(c.steering.mode == "fixed" || c.steering.mode == "fair_sample",
        "steering.mode must be \"fixed\" or \"fair_sample\"");
  check(c.sampler.steps >= 1 && c.sampler.steps <= c.model.T, "sampler.steps must lie in [1, model.T]");
  check(c.sampler.guidance_scale >= 0, "sampler.guidance_scale must be >= 0");
  check(c.steering.warm_up_step >= 0 && c.steering.warm_up_step <= c.sampler.steps,
        "steering.warm_up_step must lie in [0, sampler.steps]");
  check(c.eval.n_images > 0 && c.eval.fair_images > 0, "eval image counts must be positive");
  check(!c.eval.unsafe_prompts.empty() && !c.eval.neutral_prompts.empty() && !c.eval.fair_prompts.empty(),
        "eval prompt lists must not be empty");
  check(!c.eval.betas.empty(), "eval.betas must not be empty");
  for (int w : c.eval.warm_up_steps)
    check(w >= 0 && w <= c.sampler.steps, "eval.warm_up_steps entries must lie in [0, sampler.steps]");
}

}  // namespace

RunConfig parse_config(const Json& doc) {
  RunConfig c;
  c.anchor.base_prompts = default_safe_prompts();
  c.anchor.target_concept = "a tainted shape";
  for (int i = 0; i < 5; ++i) {
    c.fair.base_prompts.emplace_back("a shape");
    c.fair.base_prompts.emplace_back("an image of a shape");
  }
  c.fair.targets = {"a circle", "a square"};
  c.fair.attributes = {"circle", "square"};
  c.eval.unsafe_prompts = attribute_prompts("a tainted ");
  c.eval.neutral_prompts = attribute_prompts("a ");
  c.eval.fair_prompts = {"a shape"};
  c.data.n_samples = 5000;
  c.model.train.epochs = 60;
  c.oracle.train.epochs = 12;

  Reader root(doc, "config");
  root.get("run_id", c.run_id);
  root.get("seed", c.seed);
  {
    auto r = root.sub("data");
    r.get("n_samples", c.data.n_samples);
    r.get("marker_bias", c.data.marker_bias);
    r.get("shape_bias", c.data.shape_bias);
    r.get("hue_bias", c.data.hue_bias);
    r.finish();
  }
  {
    auto r = root.sub("model");
    r.get("T", c.model.T);
    auto a = r.sub("arch");
    a.get("c1", c.model.arch.c1);
    a.get("c2", c.model.arch.c2);
    a.get("c3", c.model.arch.c3);
    a.get("embed", c.model.arch.embed);
    a.finish();
    auto t = r.sub("train");
    t.get("epochs", c.model.train.epochs);
    t.get("batch", c.model.train.batch);
    t.get("lr", c.model.train.lr);
    t.get("p_uncond", c.model.train.p_uncond);
    t.get("p_omit", c.model.train.p_omit);
    t.get("grad_clip", c.model.train.grad_clip);
    t.finish();
    r.finish();
  }
  {
    auto r = root.sub("oracle");
    r.get("n_samples", c.oracle.n_samples);
    r.get("n_holdout", c.oracle.n_holdout);
    r.get("epochs", c.oracle.train.epochs);
    r.get("batch", c.oracle.train.batch);
    r.get("lr", c.oracle.train.lr);
    r.get("noise", c.oracle.train.noise);
    r.get("min_accuracy", c.oracle.min_accuracy);
    r.finish();
  }
  {
    auto r = root.sub("anchor");
    std::string mode{anchoring::name(c.anchor.mode)};
    std::string kind{anchoring::name(c.anchor.kind)};
    r.get("base_prompts", c.anchor.base_prompts);
    r.get("target_concept", c.anchor.target_concept);
    r.get("mode", mode);
    r.get("w", c.anchor.w);
    r.get("epochs", c.anchor.epochs);
    r.get("lr", c.anchor.lr);
    r.get("steps", c.anchor.steps);
    r.get("kind", kind);
    r.finish();
    c.anchor.mode = anchoring::parse_target_mode(mode);
    c.anchor.kind = anchoring::parse_vector_kind(kind);
  }
  {
    auto r = root.sub("fair");
    r.get("shape_bias", c.fair.shape_bias);
    r.get("base_prompts", c.fair.base_prompts);
    r.get("targets", c.fair.targets);
    r.get("attributes", c.fair.attributes);
    r.get("w", c.fair.w);
    r.get("epochs", c.fair.epochs);
    r.get("lr", c.fair.lr);
    r.finish();
  }
  {
    auto r = root.sub("steering");
    r.get("mode", c.steering.mode);
    r.get("vectors", c.steering.vectors);
    r.get("warm_up_step", c.steering.warm_up_step);
    r.get("fair_vectors", c.steering.fair_vectors);
    r.finish();
  }
  {
    auto r = root.sub("sampler");
    r.get("steps", c.sampler.steps);
    r.get("guidance_scale", c.sampler.guidance_scale);
    r.finish();
  }
  {
    auto r = root.sub("eval");
    r.get("n_images", c.eval.n_images);
    r.get("unsafe_prompts", c.eval.unsafe_prompts);
    r.get("neutral_prompts", c.eval.neutral_prompts);
    r.get("fair_prompts", c.eval.fair_prompts);
    r.get("fair_images", c.eval.fair_images);
    r.get("betas", c.eval.betas);
    r.get("warm_up_steps", c.eval.warm_up_steps);
    r.get("min_alignment", c.eval.min_alignment);
    r.finish();
  }
  {
    auto r = root.sub("paths");
    r.get("dataset", c.paths.dataset);
    r.get("denoiser", c.paths.denoiser);
    r.get("oracle", c.paths.oracle);
    r.get("vector", c.paths.vector);
    r.finish();
  }
  root.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::ConfigError, "cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(Errc::ConfigError, "config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(doc);
}

Json RunConfig::canonical() const {
  auto opt = [](const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); };
  Json vectors = Json::array();
  for (const auto& v : steering.vectors) vectors.push_back({{"path", v.path}, {"beta", v.beta}});
  return Json{
      {"run_id", run_id},
      {"seed", seed},
      {"data",
       {{"n_samples", data.n_samples},
        {"marker_bias", data.marker_bias},
        {"shape_bias", data.shape_bias},
        {"hue_bias", data.hue_bias}}},
      {"model",
       {{"T", model.T},
        {"arch", {{"c1", model.arch.c1}, {"c2", model.arch.c2}, {"c3", model.arch.c3}, {"embed", model.arch.embed}}},
        {"train",
         {{"epochs", model.train.epochs},
          {"batch", model.train.batch},
          {"lr", model.train.lr},
          {"p_uncond", model.train.p_uncond},
          {"p_omit", model.train.p_omit},
          {"grad_clip", model.train.grad_clip}}}}},
      {"oracle",
       {{"n_samples", oracle.n_samples},
        {"n_holdout", oracle.n_holdout},
        {"epochs", oracle.train.epochs},
        {"batch", oracle.train.batch},
        {"lr", oracle.train.lr},
        {"noise", oracle.train.noise},
        {"min_accuracy", oracle.min_accuracy}}},
      {"anchor",
       {{"base_prompts", anchor.base_prompts},
        {"target_concept", anchor.target_concept},
        {"mode", anchoring::name(anchor.mode)},
        {"w", anchor.w},
        {"epochs", anchor.epochs},
        {"lr", anchor.lr},
        {"steps", anchor.steps},
        {"kind", anchoring::name(anchor.kind)}}},
      {"fair",
       {{"shape_bias", fair.shape_bias},
        {"base_prompts", fair.base_prompts},
        {"targets", fair.targets},
        {"attributes", fair.attributes},
        {"w", fair.w},
        {"epochs", fair.epochs},
        {"lr", fair.lr}}},
      {"steering",
       {{"mode", steering.mode},
        {"vectors", vectors},
        {"warm_up_step", steering.warm_up_step},
        {"fair_vectors", steering.fair_vectors}}},
      {"sampler", {{"steps", sampler.steps}, {"guidance_scale", sampler.guidance_scale}}},
      {"eval",
       {{"n_images", eval.n_images},
        {"unsafe_prompts", eval.unsafe_prompts},
        {"neutral_prompts", eval.neutral_prompts},
        {"fair_prompts", eval.fair_prompts},
        {"fair_images", eval.fair_images},
        {"betas", eval.betas},
        {"warm_up_steps", eval.warm_up_steps},
        {"min_alignment", eval.min_alignment}}},
      {"paths",
       {{"dataset", opt(paths.dataset)},
        {"denoiser", opt(paths.denoiser)},
        {"oracle", opt(paths.oracle)},
        {"vector", opt(paths.vector)}}},
  };
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(Errc::IoError, "SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string json_digest(const Json& value) { return sha256_hex(value.dump()); }

std::string RunConfig::digest() const { return json_digest(canonical()); }

std::uint64_t component_seed(const RunConfig& cfg, SeedTag tag) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(tag));
}

anchoring::AnchorConfig anchor_config(const RunConfig& cfg, const AnchorSection& s,
                                      std::uint64_t seed) {
  anchoring::AnchorConfig a;
  a.base_prompts = s.base_prompts;
  a.target_concept = s.target_concept;
  a.mode = s.mode;
  a.w = s.w;
  a.epochs = s.epochs;
  a.adam.lr = s.lr;
  a.steps = s.steps;
  a.kind = s.kind;
  a.seed = seed;
  (void)cfg;
  return a;
}

}  // namespace lab::harness
