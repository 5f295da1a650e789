#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "lab/eval.hpp"
#include "test_util.hpp"

namespace {

using namespace lab;
using namespace lab::eval;
using world::Hue;
using world::Marker;
using world::Shape;

double delta(std::vector<std::int64_t> counts) { return deviation_ratio(AttributeCounts{std::move(counts)}); }

TEST(DeviationRatio, HandValues) {
  EXPECT_EQ(delta({50, 50}), 0.0);
  EXPECT_EQ(delta({197, 3}), 0.97);
  EXPECT_EQ(delta({150, 0, 0}), 1.0);
  EXPECT_EQ(delta({0, 7}), 1.0);
  EXPECT_LAB_ERROR(delta({0, 0}), Errc::ZeroTotal);
  EXPECT_LAB_ERROR(delta({5}), Errc::InvalidArgument);
}

/// The formula as written, in long double.
long double brute_delta(const std::vector<std::int64_t>& c) {
  const long double n = std::accumulate(c.begin(), c.end(), 0.0L);
  const long double k = c.size();
  long double worst = 0;
  for (auto v : c) worst = std::max(worst, std::fabs(v / n - 1.0L / k));
  return worst / (1.0L - 1.0L / k);
}

void exhaustive(int classes, int max_total, const std::function<void(const std::vector<std::int64_t>&)>& f) {
  std::vector<std::int64_t> c(classes, 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == classes) {
      if (std::accumulate(c.begin(), c.end(), std::int64_t{0}) > 0) f(c);
      return;
    }
    for (int v = 0; v <= left; ++v) {
      c[i] = v;
      rec(i + 1, left - v);
    }
  };
  rec(0, max_total);
}

TEST(DeviationRatio, ExhaustiveSmallTables) {
  for (int classes : {2, 3}) {
    exhaustive(classes, 12, [&](const std::vector<std::int64_t>& c) {
      const double d = delta(c);
      EXPECT_NEAR(d, static_cast<double>(brute_delta(c)), 1e-15);
      EXPECT_GE(d, 0.0);
      EXPECT_LE(d, 1.0);
      const bool all_equal = std::all_of(c.begin(), c.end(), [&](auto v) { return v == c[0]; });
      const auto total = std::accumulate(c.begin(), c.end(), std::int64_t{0});
      const bool one_holds_all = std::any_of(c.begin(), c.end(), [&](auto v) { return v == total; });
      EXPECT_EQ(d == 0.0, all_equal);
      EXPECT_EQ(d == 1.0, one_holds_all);
      auto perm = c;
      std::reverse(perm.begin(), perm.end());
      EXPECT_EQ(delta(perm), d);
      std::rotate(perm.begin(), perm.begin() + 1, perm.end());
      EXPECT_EQ(delta(perm), d);
      auto scaled = c;
      for (auto& v : scaled) v *= 7;
      EXPECT_EQ(delta(scaled), d);
    });
  }
}

TEST(UnsafeRatio, Counting) {
  std::vector<Classification> labels(10);
  EXPECT_EQ(unsafe_ratio(labels), 0.0);
  for (int i = 0; i < 3; ++i) labels[i].attrs.marker = Marker::Tainted;
  EXPECT_EQ(unsafe_ratio(labels), 0.3);
  EXPECT_LAB_ERROR(unsafe_ratio(std::span<const Classification>{}), Errc::EmptyList);
}

Mat<double> standardized_column(int n, std::uint64_t seed) {
  Eigen::VectorXd x = test::random_matrix<double>(seed, n, 1);
  x.array() -= x.mean();
  x /= std::sqrt(x.squaredNorm() / (n - 1));
  return x;
}

TEST(Frechet, OneDimensionalClosedForm) {
  // N(0,1) vs N(1,1) with exact sample moments, padded to 32 features.
  const int n = 200;
  Mat<double> a = Mat<double>::Zero(n, kFeatureDim);
  a.col(0) = standardized_column(n, 1);
  Mat<double> b = Mat<double>::Zero(n, kFeatureDim);
  b.col(0) = standardized_column(n, 2).array() + 1.0;
  EXPECT_NEAR(frechet(a, b), 1.0, 1e-3);
}

TEST(Frechet, IdentitySymmetryTranslation) {
  const auto a = test::random_matrix<double>(3, 100, kFeatureDim);
  Mat<double> b = test::random_matrix<double>(4, 120, kFeatureDim, 1.5);
  b.col(3).array() += 2.0;
  EXPECT_NEAR(frechet(a, a), 0.0, 1e-6);
  const double ab = frechet(a, b);
  EXPECT_GT(ab, 0.0);
  EXPECT_NEAR(ab, frechet(b, a), 1e-6);
  const Eigen::RowVectorXd shift = test::random_matrix<double>(5, 1, kFeatureDim, 3.0);
  const Mat<double> a2 = a.rowwise() + shift;
  const Mat<double> b2 = b.rowwise() + shift;
  EXPECT_NEAR(frechet(a2, b2), ab, 1e-6);
}

TEST(Frechet, MatchesIndependentEigenRoute) {
  // Tr((Sa Sb)^1/2) via the eigenvalues of Sa Sb, which are real and >= 0.
  const auto a = test::random_matrix<double>(6, 90, kFeatureDim);
  const Mat<double> b = test::random_matrix<double>(7, 80, kFeatureDim) * 0.7 +
                        Mat<double>::Constant(80, kFeatureDim, 0.2);
  auto moments = [](const Mat<double>& x) {
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Mat<double> c = x.rowwise() - mu;
    return std::pair{mu, Mat<double>(c.transpose() * c / (x.rows() - 1.0))};
  };
  const auto [ma, sa] = moments(a);
  const auto [mb, sb] = moments(b);
  Eigen::EigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(sa * sb));
  double tr_sqrt = 0.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  const double want = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  EXPECT_NEAR(frechet(a, b), want, 1e-6 * std::max(1.0, want));
}

TEST(Frechet, Errors) {
  EXPECT_LAB_ERROR(frechet(Mat<double>::Zero(32, kFeatureDim), Mat<double>::Zero(50, kFeatureDim)),
                   Errc::TooFewSamples);
  EXPECT_LAB_ERROR(frechet(Mat<double>::Zero(50, 3), Mat<double>::Zero(50, 4)), Errc::ShapeMismatch);
}

Classification labelled(Shape s, Hue h, Marker m) {
  Classification c;
  c.attrs = {s, h, m};
  return c;
}

TEST(Alignment, StatedAttributesOnly) {
  const std::vector<Classification> labels{labelled(Shape::Circle, Hue::Red, Marker::Clean),
                                           labelled(Shape::Square, Hue::Blue, Marker::Tainted)};
  EXPECT_EQ(alignment(labels, std::vector<std::string>{"a red circle", "a tainted blue square"}), 1.0);
  EXPECT_EQ(alignment(labels, std::vector<std::string>{"a green circle", "a red square"}), 0.0);
  EXPECT_EQ(alignment(labels, std::vector<std::string>{"a shape", "a shape"}), 1.0);
  EXPECT_EQ(alignment(labels, std::vector<std::string>{"a circle", "a circle"}), 0.5);
  EXPECT_EQ(alignment(labels, std::vector<std::string>{"a clean circle", "a clean square"}), 0.5);
  EXPECT_LAB_ERROR(alignment(labels, std::vector<std::string>{"a shape"}), Errc::LengthMismatch);
  EXPECT_LAB_ERROR(alignment(labels, std::vector<std::string>{"a shape", "a purple shape"}),
                   Errc::UnparseablePrompt);
  EXPECT_LAB_ERROR(parse_prompt("a red blue circle"), Errc::UnparseablePrompt);
}

TEST(ParsePrompt, Fields) {
  const auto p = parse_prompt("a tainted green square");
  EXPECT_EQ(p.shape, Shape::Square);
  EXPECT_EQ(p.hue, Hue::Green);
  EXPECT_EQ(p.marker, Marker::Tainted);
  const auto q = parse_prompt("an image of a shape");
  EXPECT_FALSE(q.shape || q.hue || q.marker);
}

TEST(Spearman, MatchesRankDifferenceFormulaWithoutTies) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + trial;
    std::vector<double> x(n), y(n);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    for (int i = 0; i < n; ++i) {
      x[i] = i * 0.37 - 2;
      y[i] = std::exp(perm[i] * 0.1);
    }
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) d2 += (i - perm[i]) * (i - perm[i]);
    EXPECT_NEAR(spearman(x, y), 1.0 - 6.0 * d2 / (n * (n * n - 1.0)), 1e-12);
  }
}

TEST(Spearman, EdgeCases) {
  const std::vector<double> up{0, 0.25, 0.5, 0.75, 1};
  const std::vector<double> down{0.9, 0.7, 0.4, 0.3, 0.1};
  EXPECT_NEAR(spearman(up, down), -1.0, 1e-12);
  EXPECT_NEAR(spearman(up, up), 1.0, 1e-12);
  // Ties get average ranks: ranks of y are 1.5, 1.5, 3, 4, 5.
  const std::vector<double> tied{1, 1, 2, 3, 4};
  EXPECT_NEAR(spearman(up, tied), 0.974679434480896, 1e-12);
  EXPECT_TRUE(std::isnan(spearman(up, std::vector<double>(5, 0.3))));
  EXPECT_LAB_ERROR(spearman(up, std::vector<double>{1, 2}), Errc::LengthMismatch);
  EXPECT_LAB_ERROR(spearman(std::vector<double>{1}, std::vector<double>{1}), Errc::TooFewSamples);
}

std::vector<world::ImageSample> labelled_set(std::size_t n, std::uint64_t seed, double marker_bias = 0.5) {
  world::DatasetSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  spec.marker_bias = marker_bias;
  return world::make_dataset(spec);
}

TEST(Oracle, MissingClassGuard) {
  EXPECT_LAB_ERROR(train_oracle(labelled_set(50, 1, 0.0)), Errc::MissingClass);
}

TEST(Oracle, DeterministicAndNormalized) {
  const auto data = labelled_set(96, 2);
  OracleTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 32;
  cfg.seed = 5;
  const auto a = train_oracle(data, cfg);
  const auto b = train_oracle(data, cfg);
  for (const auto& [k, m] : a.weights) EXPECT_EQ(m, b.weights.at(k)) << k;
  const auto c1 = classify(a, data[0].pixels);
  const auto c2 = classify(a, data[0].pixels);
  EXPECT_EQ(c1.attrs, c2.attrs);
  EXPECT_EQ(c1.feature, c2.feature);
  EXPECT_EQ(c1.feature.size(), static_cast<std::size_t>(kFeatureDim));
  auto sum = [](const auto& p) { return std::accumulate(p.begin(), p.end(), 0.0); };
  EXPECT_NEAR(sum(c1.p_shape), 1.0, 1e-5);
  EXPECT_NEAR(sum(c1.p_hue), 1.0, 1e-5);
  EXPECT_NEAR(sum(c1.p_marker), 1.0, 1e-5);
  std::vector<world::Pixels> images;
  for (int i = 0; i < 5; ++i) images.push_back(data[i].pixels);
  const auto batch = classify_batch(a, images);
  for (int i = 0; i < 5; ++i) {
    const auto single = classify(a, images[i]);
    EXPECT_EQ(batch[i].attrs, single.attrs);
    for (int f = 0; f < kFeatureDim; ++f) EXPECT_NEAR(batch[i].feature[f], single.feature[f], 1e-5);
  }
  EXPECT_LAB_ERROR(classify(a, Mat<float>::Zero(3, 10)), Errc::ShapeMismatch);
}

}  // namespace
