#include <fstream>
#include <set>

#include "lab/config.hpp"
#include "test_util.hpp"

#ifndef LAB_CONFIG_DIR
#error "LAB_CONFIG_DIR must point at configs/"
#endif

namespace {

using namespace lab;
using namespace lab::harness;

Json parse(const char* text) { return Json::parse(text); }

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto c = parse_config(Json::object());
  EXPECT_EQ(c.model.T, 200);
  EXPECT_EQ(c.sampler.steps, 50);
  EXPECT_EQ(c.sampler.guidance_scale, 4.0);
  EXPECT_EQ(c.anchor.w, 3.0);
  EXPECT_EQ(c.anchor.lr, 0.05);
  EXPECT_EQ(c.anchor.base_prompts.size(), 12u);
  EXPECT_EQ(c.fair.base_prompts.size(), 10u);
  EXPECT_EQ(c.steering.warm_up_step, 15);
  EXPECT_EQ(c.model.train.p_uncond, 0.1);
  EXPECT_EQ(c.eval.betas, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_EQ(c.digest().size(), 64u);
}

TEST(Config, ShippedDefaultMatchesBuiltInDefaults) {
  const auto file = load_config(std::filesystem::path(LAB_CONFIG_DIR) / "default.json");
  auto builtin = parse_config(Json::object());
  builtin.run_id = file.run_id;
  builtin.seed = file.seed;
  builtin.data.hue_bias = file.data.hue_bias;  // JSON spells thirds so they sum to exactly 1
  EXPECT_EQ(file.canonical(), builtin.canonical());
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_LAB_ERROR(parse_config(parse(R"({"sed": 1})")), Errc::UnknownKey);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"model": {"arch": {"c4": 3}}})")), Errc::UnknownKey);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"steering": {"vectors": [{"path": "x", "gamma": 1}]}})")),
                   Errc::UnknownKey);
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_LAB_ERROR(parse_config(parse(R"({"seed": "one"})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"seed": -1})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"data": {"shape_bias": [0.5]}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"data": {"shape_bias": [0.6, 0.6]}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"anchor": {"mode": "sideways"}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"anchor": {"w": 0}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"sampler": {"steps": 300}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"steering": {"warm_up_step": 51}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"steering": {"mode": "random"}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"run_id": "a,b"})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"({"fair": {"shape_bias": [1.0, 0.5]}})")), Errc::ConfigError);
  EXPECT_LAB_ERROR(parse_config(parse(R"([1, 2])")), Errc::ConfigError);
}

TEST(Config, DigestStableUnderKeyReordering) {
  const auto a = parse_config(parse(R"({"seed": 5, "run_id": "x", "sampler": {"steps": 60, "guidance_scale": 3.5},
                                        "data": {"marker_bias": 0.6, "n_samples": 100}})"));
  const auto b = parse_config(parse(R"({"data": {"n_samples": 100, "marker_bias": 0.6},
                                        "sampler": {"guidance_scale": 3.5, "steps": 60}, "run_id": "x", "seed": 5})"));
  EXPECT_EQ(a.digest(), b.digest());
  const auto c = parse_config(parse(R"({"seed": 6, "run_id": "x", "sampler": {"steps": 60, "guidance_scale": 3.5},
                                        "data": {"marker_bias": 0.6, "n_samples": 100}})"));
  EXPECT_NE(a.digest(), c.digest());
  // Spelling out a default does not change the digest.
  EXPECT_EQ(parse_config(Json::object()).digest(), parse_config(parse(R"({"anchor": {"w": 3.0}})")).digest());
  EXPECT_EQ(a.digest(), sha256_hex(a.canonical().dump()));
}

TEST(Config, CanonicalRoundTrip) {
  const auto a = parse_config(parse(R"({"seed": 9, "paths": {"oracle": "/tmp/o.lalb"},
                                        "steering": {"vectors": [{"path": "v.lalb", "beta": 0.5}]}})"));
  const auto b = parse_config(a.canonical());
  EXPECT_EQ(a.digest(), b.digest());
  ASSERT_TRUE(b.paths.oracle.has_value());
  EXPECT_EQ(*b.paths.oracle, "/tmp/o.lalb");
  EXPECT_EQ(b.steering.vectors.at(0).beta, 0.5);
}

TEST(Config, LoadErrors) {
  test::TempDir dir("config_load");
  EXPECT_LAB_ERROR(load_config(dir.path() / "missing.json"), Errc::ConfigError);
  std::ofstream(dir.path() / "bad.json") << "{\"seed\": 1,}";
  EXPECT_LAB_ERROR(load_config(dir.path() / "bad.json"), Errc::ConfigError);
}

TEST(Seeds, ComponentSeedsDistinctAndStable) {
  auto c = parse_config(Json::object());
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 1; tag <= static_cast<std::uint64_t>(SeedTag::Combination); ++tag)
    seen.insert(component_seed(c, static_cast<SeedTag>(tag)));
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(SeedTag::Combination));
  const auto before = component_seed(c, SeedTag::Anchor);
  c.seed += 1;
  EXPECT_NE(component_seed(c, SeedTag::Anchor), before);
  EXPECT_EQ(derive_seed(3, 4), derive_seed(3, 4));
  EXPECT_NE(derive_seed(3, 4), derive_seed(4, 3));
}

TEST(Seeds, AnchorConfigCarriesSection) {
  const auto c = parse_config(Json::object());
  const auto ac = anchor_config(c, c.anchor, 77);
  EXPECT_EQ(ac.seed, 77u);
  EXPECT_EQ(ac.base_prompts, c.anchor.base_prompts);
  EXPECT_EQ(ac.adam.lr, 0.05);
  EXPECT_EQ(ac.mode, anchoring::TargetMode::AwayFrom);
  EXPECT_EQ(ac.steps, 50);
}

}  // namespace
