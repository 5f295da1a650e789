#include <cmath>

#include <Eigen/SVD>

#include "lab/anchoring.hpp"
#include "test_util.hpp"

namespace {

using namespace lab;
using namespace lab::anchoring;
using textenc::kDim;
using textenc::kSeqLen;

double singular_ratio(const Mat<float>& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.cast<double>());
  const auto s = svd.singularValues();
  return s(1) == 0.0 ? INFINITY : s(0) / s(1);
}

TEST(Materialize, LowRankAndDense) {
  auto d = DirectionVector::low_rank(3);
  EXPECT_TRUE(materialize(d).isZero(0.0));
  EXPECT_EQ(materialize(d).rows(), kSeqLen);
  EXPECT_EQ(materialize(d).cols(), kDim);
  d.params["B"].setZero();
  d.params["B"](3, 0) = 1.0f;
  const auto m = materialize(d);
  for (int r = 0; r < kSeqLen; ++r) {
    if (r == 3)
      EXPECT_EQ(Mat<float>(m.row(r)), d.params["A"]);
    else
      EXPECT_TRUE(m.row(r).isZero(0.0));
  }
  EXPECT_TRUE(materialize(DirectionVector::dense_zero()).isZero(0.0));
  const auto dense = test::random_matrix<float>(4, kSeqLen, kDim);
  EXPECT_EQ(materialize(DirectionVector::dense(dense)), dense);
}

TEST(Materialize, RandomLowRankRowsAreParallel) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto d = DirectionVector::low_rank(s);
    d.params["B"] = test::random_matrix<float>(s + 50, kSeqLen, 1);
    const Mat<double> m = materialize(d).cast<double>();
    for (int i = 0; i < kSeqLen; ++i)
      for (int j = i + 1; j < kSeqLen; ++j)
        for (int a = 0; a < kDim; ++a)
          for (int b = a + 1; b < kDim; ++b) {
            const double cross = m(i, a) * m(j, b) - m(i, b) * m(j, a);
            EXPECT_NEAR(cross, 0.0, 1e-5 * (std::abs(m(i, a) * m(j, b)) + 1e-12));
          }
    EXPECT_GT(singular_ratio(materialize(d)), 1e6);
  }
}

TEST(DirectionVector, InitState) {
  const auto a = DirectionVector::low_rank(9);
  const auto b = DirectionVector::low_rank(9);
  EXPECT_TRUE(a.params.at("B").isZero(0.0));
  EXPECT_EQ(a.params.at("A"), b.params.at("A"));
  EXPECT_GT(a.params.at("A").norm(), 0.0f);
  EXPECT_NE(a.params.at("A"), DirectionVector::low_rank(10).params.at("A"));
  auto bad = a;
  bad.params["B"] = Mat<float>::Zero(kSeqLen, 2);
  EXPECT_LAB_ERROR(bad.validate(), Errc::ShapeMismatch);
  EXPECT_LAB_ERROR(DirectionVector::dense(Mat<float>::Zero(2, 2)), Errc::ShapeMismatch);
}

TEST(PsiTarget, Algebra) {
  const auto u = test::random_matrix<float>(1, 3, 256);
  const auto o = test::random_matrix<float>(2, 3, 256);
  EXPECT_EQ(psi_target<float>(u, o, 1.0, TargetMode::Towards), o);
  EXPECT_EQ(psi_target<float>(u, o, 1.0, TargetMode::AwayFrom), Mat<float>(2.0f * u - o));
  for (double w : {0.5, 1.0, 3.0, 10.0})
    for (auto mode : {TargetMode::Towards, TargetMode::AwayFrom})
      EXPECT_LT((psi_target<float>(u, u, w, mode) - u).cwiseAbs().maxCoeff(), 1e-5f);
  const auto ud = test::random_matrix<double>(3, 3, 256), od = test::random_matrix<double>(4, 3, 256);
  const Mat<double> away = psi_target<double>(ud, od, 3.0, TargetMode::AwayFrom);
  EXPECT_LT((away - (ud - 3.0 * (od - ud))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LAB_ERROR(psi_target<float>(u, o, 0.0, TargetMode::Towards), Errc::InvalidArgument);
  EXPECT_LAB_ERROR(psi_target<float>(u, Mat<float>::Zero(1, 1), 1.0, TargetMode::Towards), Errc::ShapeMismatch);
}

struct DoubleProblem {
  ParamMap<double> weights;
  AnchorProblem<double> problem;
};

DoubleProblem make_problem(std::uint64_t seed, diffusion::DenoiserArch arch) {
  DoubleProblem p;
  p.weights = cast_params<double>(diffusion::DenoiserParams::init(arch, 200, seed).weights);
  p.problem.denoiser = &p.weights;
  p.problem.z_t = test::random_matrix<double>(seed + 1, 3, 256);
  p.problem.t = 10 + static_cast<int>(seed * 37 % 180);
  p.problem.prompt = test::random_matrix<double>(seed + 2, kSeqLen, kDim);
  p.problem.target = test::random_matrix<double>(seed + 3, 3, 256);
  return p;
}

ParamMap<double> random_vector(VectorKind kind, std::uint64_t seed) {
  ParamMap<double> v;
  if (kind == VectorKind::LowRank) {
    v["A"] = test::random_matrix<double>(seed, 1, kDim);
    v["B"] = test::random_matrix<double>(seed + 1, kSeqLen, 1, 0.3);
  } else {
    v["M"] = test::random_matrix<double>(seed, kSeqLen, kDim, 0.3);
  }
  return v;
}

/// Worst elementwise relative error of loss_gradient against central
/// differences with step h.
double worst_relative_error(const AnchorProblem<double>& pr, VectorKind kind, const ParamMap<double>& v) {
  const double h = 1e-4;
  const auto lg = loss_gradient<double>(pr, kind, v);
  double worst = 0.0;
  for (const auto& [name, m] : v) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      auto plus = v, minus = v;
      plus[name].data()[i] += h;
      minus[name].data()[i] -= h;
      const double numeric = (anchoring_loss<double>(pr, kind, plus) - anchoring_loss<double>(pr, kind, minus)) / (2 * h);
      const double analytic = lg.grads.at(name).data()[i];
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-300);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

TEST(LossGradient, MatchesFiniteDifferencesLowRank) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = make_problem(100 + s, test::tiny_arch());
    EXPECT_LT(worst_relative_error(p.problem, VectorKind::LowRank, random_vector(VectorKind::LowRank, s)), 1e-5)
        << "config " << s;
  }
}

TEST(LossGradient, MatchesFiniteDifferencesDense) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = make_problem(200 + s, test::tiny_arch());
    EXPECT_LT(worst_relative_error(p.problem, VectorKind::Dense, random_vector(VectorKind::Dense, s)), 1e-5)
        << "config " << s;
  }
}

TEST(LossGradient, ChainRuleThroughOuterProduct) {
  const auto p = make_problem(300, test::tiny_arch());
  const auto lr = random_vector(VectorKind::LowRank, 7);
  ParamMap<double> dense{{"M", lr.at("B") * lr.at("A")}};
  const auto g_low = loss_gradient<double>(p.problem, VectorKind::LowRank, lr);
  const auto g_dense = loss_gradient<double>(p.problem, VectorKind::Dense, dense);
  EXPECT_NEAR(g_low.loss, g_dense.loss, 1e-9 * std::abs(g_dense.loss));
  const Mat<double>& gm = g_dense.grads.at("M");
  EXPECT_LT((g_low.grads.at("A") - lr.at("B").transpose() * gm).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((g_low.grads.at("B") - gm * lr.at("A").transpose()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(AnchoringLoss, MatchesIndependentRecomputation) {
  const auto den = test::tiny_denoiser(11, 200);
  AnchorProblem<float> pr;
  pr.denoiser = &den.weights;
  pr.z_t = test::random_matrix<float>(12, 3, 256);
  pr.t = 77;
  pr.prompt = test::random_matrix<float>(13, kSeqLen, kDim);
  pr.target = test::random_matrix<float>(14, 3, 256);
  auto d = DirectionVector::low_rank(15);
  d.params["B"] = test::random_matrix<float>(16, kSeqLen, 1, 0.2);

  textenc::PromptEmbedding steered{pr.prompt + d.params["B"] * d.params["A"]};
  const Mat<double> diff = (diffusion::predict_noise(den, pr.z_t, pr.t, &steered) - pr.target).cast<double>();
  const double expected = diff.squaredNorm();
  const double got = anchoring_loss<float>(pr, d.kind, d.params);
  EXPECT_NEAR(got, expected, 1e-6 * expected);
  EXPECT_GE(got, 0.0);
}

TEST(LossGradient, ZeroAtCoincidencePoint) {
  const auto den = test::tiny_denoiser(17, 200);
  AnchorProblem<float> pr;
  pr.denoiser = &den.weights;
  pr.z_t = test::random_matrix<float>(18, 3, 256);
  pr.t = 120;
  pr.prompt = textenc::encode_text("a tainted shape", textenc::TextEncoderParams::init(19)).rows;
  textenc::PromptEmbedding c{pr.prompt};
  const auto eps_o = diffusion::predict_noise(den, pr.z_t, pr.t, &c);
  const auto eps_u = diffusion::predict_noise(den, pr.z_t, pr.t, nullptr);
  pr.target = psi_target<float>(eps_u, eps_o, 1.0, TargetMode::Towards);
  const auto d = DirectionVector::low_rank(20);
  const auto lg = loss_gradient<float>(pr, d.kind, d.params);
  EXPECT_EQ(lg.loss, 0.0f);
  EXPECT_TRUE(lg.grads.at("A").isZero(0.0));
  EXPECT_TRUE(lg.grads.at("B").isZero(0.0));
}

TEST(Adam, ZeroGradientLeavesParams) {
  ParamMap<double> p{{"x", test::random_matrix<double>(1, 2, 3)}};
  const auto before = p;
  AdamState<double> st;
  adam_update(st, p, {{"x", Mat<double>::Zero(2, 3)}}, AdamConfig{});
  EXPECT_EQ(p.at("x"), before.at("x"));
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const double lr = 0.05;
  ParamMap<double> p{{"x", Mat<double>::Zero(3, 4)}};
  Mat<double> g = test::random_matrix<double>(2, 3, 4);
  AdamState<double> st;
  AdamConfig cfg;
  cfg.lr = lr;
  adam_update(st, p, {{"x", g}}, cfg);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double step = std::abs(p.at("x").data()[i]);
    EXPECT_GE(step, 0.99 * lr);
    EXPECT_LE(step, lr);
    EXPECT_LT(p.at("x").data()[i] * g.data()[i], 0.0);
  }
}

TEST(Adam, DeterministicTrajectory) {
  auto run = [] {
    ParamMap<float> p{{"w", test::random_matrix<float>(3, 4, 4)}};
    AdamState<float> st;
    for (int k = 0; k < 20; ++k) adam_update(st, p, {{"w", test::random_matrix<float>(100 + k, 4, 4)}}, AdamConfig{});
    return p.at("w");
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsMismatchedGradient) {
  ParamMap<float> p{{"w", Mat<float>::Zero(2, 2)}};
  AdamState<float> st;
  EXPECT_LAB_ERROR(adam_update(st, p, {{"w", Mat<float>::Zero(3, 2)}}, AdamConfig{}), Errc::ShapeMismatch);
  EXPECT_LAB_ERROR(adam_update(st, p, {{"v", Mat<float>::Zero(2, 2)}}, AdamConfig{}), Errc::ShapeMismatch);
}

AnchorConfig small_config() {
  AnchorConfig c;
  c.base_prompts = {"an image of tainted", "a tainted red circle"};
  c.target_concept = "a tainted shape";
  c.mode = TargetMode::AwayFrom;
  c.epochs = 1;
  c.steps = 5;
  c.seed = 21;
  return c;
}

TEST(Discover, ZeroEpochsReturnsZeroVector) {
  const auto den = test::tiny_denoiser(22);
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto r = discover(den, textenc::TextEncoderParams::init(22), cfg);
  EXPECT_TRUE(materialize(r.vector).isZero(0.0));
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.vector.params.at("A"), DirectionVector::low_rank(cfg.seed).params.at("A"));
}

TEST(Discover, StepCountDeterminismAndFrozenModel) {
  const auto den = test::tiny_denoiser(23);
  const auto te = textenc::TextEncoderParams::init(23);
  const auto den_before = den.weights;
  const auto te_before = te.weights;
  auto cfg = small_config();
  cfg.epochs = 2;
  int calls = 0;
  const auto a = discover(den, te, cfg, [&](const DiscoverStep&) { ++calls; });
  const auto b = discover(den, te, cfg);
  EXPECT_EQ(calls, 2 * 2 * 5);
  EXPECT_EQ(a.losses.size(), 20u);
  EXPECT_EQ(a.losses, b.losses);
  for (const auto& [k, m] : a.vector.params) EXPECT_EQ(m, b.vector.params.at(k));
  EXPECT_EQ(a.vector.meta.concept_label, "a tainted shape");
  EXPECT_EQ(a.vector.meta.mode, TargetMode::AwayFrom);
  for (const auto& [k, m] : den_before) EXPECT_EQ(den.weights.at(k), m);
  for (const auto& [k, m] : te_before) EXPECT_EQ(te.weights.at(k), m);
  EXPECT_GT(materialize(a.vector).norm(), 0.0f);
}

TEST(Discover, LowRankStaysRankOne) {
  const auto den = test::tiny_denoiser(24);
  const auto te = textenc::TextEncoderParams::init(24);
  for (int epochs : {1, 2, 3}) {
    auto cfg = small_config();
    cfg.epochs = epochs;
    cfg.seed = 30 + epochs;
    const auto m = materialize(discover(den, te, cfg).vector);
    ASSERT_GT(m.norm(), 0.0f);
    EXPECT_GT(singular_ratio(m), 1e6) << "epochs " << epochs;
  }
}

TEST(Discover, DenseStartsFromZero) {
  const auto den = test::tiny_denoiser(25);
  auto cfg = small_config();
  cfg.kind = VectorKind::Dense;
  cfg.epochs = 0;
  EXPECT_TRUE(materialize(discover(den, textenc::TextEncoderParams::init(25), cfg).vector).isZero(0.0));
  cfg.epochs = 1;
  const auto d = discover(den, textenc::TextEncoderParams::init(25), cfg).vector;
  EXPECT_EQ(d.kind, VectorKind::Dense);
  EXPECT_GT(materialize(d).norm(), 0.0f);
}

TEST(Discover, StationaryAtCoincidence) {
  const auto den = test::tiny_denoiser(26);
  AnchorConfig cfg;
  cfg.base_prompts = {"a tainted shape"};
  cfg.target_concept = "a tainted shape";
  cfg.mode = TargetMode::Towards;
  cfg.w = 1.0;
  cfg.epochs = 1;
  cfg.steps = 10;
  cfg.seed = 27;
  const auto r = discover(den, textenc::TextEncoderParams::init(26), cfg);
  EXPECT_LT(materialize(r.vector).norm(), 1e-6f);
  for (double l : r.losses) EXPECT_EQ(l, 0.0);
}

TEST(AnchorConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate(20));
  c.steps = 21;
  EXPECT_LAB_ERROR(c.validate(20), Errc::ConfigError);
  c = small_config();
  c.base_prompts.clear();
  EXPECT_LAB_ERROR(c.validate(20), Errc::ConfigError);
  c = small_config();
  c.w = 0.0;
  EXPECT_LAB_ERROR(c.validate(20), Errc::ConfigError);
  c = small_config();
  c.base_prompts = {"a purple shape"};
  EXPECT_LAB_ERROR(discover(test::tiny_denoiser(1), textenc::TextEncoderParams::init(1), c), Errc::UnknownToken);
}

TEST(Names, ParseRoundTrip) {
  for (auto m : {TargetMode::Towards, TargetMode::AwayFrom}) EXPECT_EQ(parse_target_mode(name(m)), m);
  for (auto k : {VectorKind::LowRank, VectorKind::Dense}) EXPECT_EQ(parse_vector_kind(name(k)), k);
  EXPECT_LAB_ERROR(parse_target_mode("sideways"), Errc::ConfigError);
}

}  // namespace
