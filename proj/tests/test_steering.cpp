#include <cmath>

#include "lab/steering.hpp"
#include "test_util.hpp"

namespace {

using namespace lab;
using namespace lab::steering;
using anchoring::DirectionVector;
using textenc::kDim;
using textenc::kSeqLen;

DirectionVector low_rank(std::uint64_t seed, double scale = 0.5) {
  auto d = DirectionVector::low_rank(seed);
  d.params["B"] = test::random_matrix<float>(seed + 1000, kSeqLen, 1, scale);
  return d;
}

/// Values on a 1/8 grid so float sums are exact.
Mat<float> dyadic(std::uint64_t seed) {
  Rng rng(seed);
  Mat<float> m(kSeqLen, kDim);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<float>(static_cast<int>(uniform_index(rng, 33)) - 16) / 8.0f;
  return m;
}

TEST(ApplyDirection, Definition) {
  const textenc::PromptEmbedding p{test::random_matrix<float>(1, kSeqLen, kDim)};
  const auto d = low_rank(2);
  EXPECT_EQ(apply_direction(p, d, 0.0).rows, p.rows);
  EXPECT_EQ(apply_direction(p, d, 1.0).rows, Mat<float>(p.rows + anchoring::materialize(d)));
  const textenc::PromptEmbedding q{dyadic(3)};
  const auto e = DirectionVector::dense(dyadic(4));
  EXPECT_EQ(apply_direction(apply_direction(q, e, 0.5), e, 0.5).rows, apply_direction(q, e, 1.0).rows);
  EXPECT_LAB_ERROR(apply_direction({Mat<float>::Zero(2, 2)}, d, 1.0), Errc::ShapeMismatch);
}

TEST(Combine, SumsAndEdgeCases) {
  const auto a = low_rank(5), b = low_rank(6);
  EXPECT_TRUE(combine({}).isZero(0.0));
  EXPECT_EQ(combine(std::vector<SteeringEntry>{{a, 1.0}}), anchoring::materialize(a));
  EXPECT_TRUE(combine(std::vector<SteeringEntry>{{a, 0.0}, {b, 0.0}}).isZero(0.0));
  const auto ab = combine(std::vector<SteeringEntry>{{a, 0.3}, {b, 1.7}});
  const auto ba = combine(std::vector<SteeringEntry>{{b, 1.7}, {a, 0.3}});
  // Equal up to rounding; the accumulation may be fused.
  EXPECT_LT((ab - ba).cwiseAbs().maxCoeff(), 1e-6f);
  const Mat<float> want = 0.3f * anchoring::materialize(a) + 1.7f * anchoring::materialize(b);
  EXPECT_LT((ab - want).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(FairSampling, SingletonAndDeterminism) {
  const std::vector<DirectionVector> one{low_rank(7)};
  Rng rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(&sample_fair_vector(one, rng), &one[0]);
  Rng r1(99), r2(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_fair_index(3, r1), sample_fair_index(3, r2));
  EXPECT_LAB_ERROR(sample_fair_index(0, r1), Errc::EmptySet);
}

TEST(FairSampling, TwoVectorCountsWithinBinomialInterval) {
  // Exact 99.9% interval of Binomial(10000, 0.5) from its pmf.
  const int n = 10000;
  std::vector<double> pmf(n + 1);
  for (int k = 0; k <= n; ++k)
    pmf[k] = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + n * std::log(0.5));
  int lo = 0;
  for (double acc = 0.0; acc + pmf[lo] <= 0.0005; ++lo) acc += pmf[lo];
  const int hi = n - lo;
  ASSERT_GE(lo, 4800);
  Rng rng(2024);
  int first = 0;
  for (int i = 0; i < n; ++i) first += sample_fair_index(2, rng) == 0;
  EXPECT_GE(first, lo);
  EXPECT_LE(first, hi);
}

class GuidedSample : public ::testing::Test {
 protected:
  diffusion::DenoiserParams den = test::tiny_denoiser(8);
  textenc::PromptEmbedding prompt = textenc::encode_text("a tainted red circle", textenc::TextEncoderParams::init(8));
  diffusion::SamplerConfig cfg{10, 4.0, 5};
};

TEST_F(GuidedSample, NoOpPlansMatchBaseline) {
  const auto base = diffusion::sample(den, prompt, cfg);
  SteeringPlan empty;
  empty.warm_up_step = 3;
  EXPECT_EQ(guided_sample(den, prompt, empty, cfg), base);
  SteeringPlan zero_beta = empty;
  zero_beta.entries = {{low_rank(9), 0.0}, {low_rank(10), 0.0}};
  EXPECT_EQ(guided_sample(den, prompt, zero_beta, cfg), base);
  SteeringPlan zero_vec = empty;
  zero_vec.entries = {{DirectionVector::low_rank(11), 1.0}};
  EXPECT_EQ(guided_sample(den, prompt, zero_vec, cfg), base);
  SteeringPlan late;
  late.entries = {{low_rank(12), 1.0}};
  late.warm_up_step = cfg.steps;
  EXPECT_EQ(guided_sample(den, prompt, late, cfg), base);
  late.warm_up_step = 0;
  EXPECT_NE(guided_sample(den, prompt, late, cfg), base);
}

TEST_F(GuidedSample, WarmUpSwitchesConditionAtStep) {
  SteeringPlan plan;
  plan.entries = {{low_rank(13, 2.0), 1.0}};
  plan.warm_up_step = 4;
  const auto steered = apply_direction(prompt, plan.entries[0].vector, 1.0);
  const auto manual = diffusion::sample_with(
      den, [&](int k) -> const textenc::PromptEmbedding& { return k < 4 ? prompt : steered; }, cfg);
  EXPECT_EQ(guided_sample(den, prompt, plan, cfg), manual);
}

TEST_F(GuidedSample, SeparateEqualsPrecombined) {
  const auto a = low_rank(14), b = low_rank(15);
  SteeringPlan separate;
  separate.entries = {{a, 1.0}, {b, 1.0}};
  separate.warm_up_step = 3;
  SteeringPlan joint;
  joint.warm_up_step = 3;
  joint.entries = {{DirectionVector::dense(anchoring::materialize(a) + anchoring::materialize(b)), 1.0}};
  for (std::uint64_t s = 0; s < 5; ++s) {
    cfg.seed = s;
    EXPECT_EQ(guided_sample(den, prompt, separate, cfg), guided_sample(den, prompt, joint, cfg));
  }
}

TEST_F(GuidedSample, FairModeUsesPerImageDraw) {
  SteeringPlan plan;
  plan.mode = PlanMode::FairSample;
  plan.fair_set = {low_rank(16, 2.0), low_rank(17, 2.0)};
  for (std::uint64_t s = 0; s < 6; ++s) {
    cfg.seed = s;
    Rng rng(fair_seed(s));
    const auto& pick = sample_fair_vector(plan.fair_set, rng);
    EXPECT_EQ(guided_sample(den, prompt, plan, cfg),
              diffusion::sample(den, apply_direction(prompt, pick, 1.0), cfg));
  }
  plan.fair_set.clear();
  EXPECT_LAB_ERROR(guided_sample(den, prompt, plan, cfg), Errc::EmptySet);
}

TEST(SteeringPlan, WarningsAndValidation) {
  SteeringPlan p;
  p.warm_up_step = 33;
  EXPECT_TRUE(p.validate(50).empty());
  p.warm_up_step = 34;
  EXPECT_EQ(p.validate(50).size(), 1u);
  p.warm_up_step = 51;
  EXPECT_LAB_ERROR(p.validate(50), Errc::ConfigError);
  p.warm_up_step = 15;
  p.entries = {{low_rank(1), std::nan("")}};
  EXPECT_LAB_ERROR(p.validate(50), Errc::ConfigError);
}

}  // namespace
