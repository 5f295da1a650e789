#include <functional>
#include <vector>

#include "lab/ad.hpp"
#include "test_util.hpp"

namespace {

using namespace lab;
using M = Mat<double>;
using V = ad::Var<double>;
using Build = std::function<V(ad::Tape<double>&, const std::vector<V>&)>;

/// Builds a scalar from the inputs, then compares reverse-mode gradients
/// with central differences for every input entry.
void check_gradients(const std::vector<M>& inputs, const Build& build, double tol = 1e-6) {
  auto eval = [&](const std::vector<M>& xs) {
    ad::Tape<double> tape;
    std::vector<V> vars;
    for (const auto& x : xs) vars.push_back(tape.param(x));
    return build(tape, vars).value()(0, 0);
  };
  ad::Tape<double> tape;
  std::vector<V> vars;
  for (const auto& x : inputs) vars.push_back(tape.param(x));
  auto root = build(tape, vars);
  ASSERT_EQ(root.rows(), 1);
  ASSERT_EQ(root.cols(), 1);
  tape.backward(root);

  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const M analytic = vars[k].grad().size() ? vars[k].grad() : M::Zero(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double numeric = (eval(plus) - eval(minus)) / (2 * h);
      EXPECT_NEAR(analytic.data()[i], numeric, tol * std::max(1.0, std::abs(numeric)))
          << "input " << k << " entry " << i;
    }
  }
}

M rnd(std::uint64_t seed, Eigen::Index r, Eigen::Index c) { return test::random_matrix<double>(seed, r, c); }

V loss(V x, std::uint64_t seed = 99) { return ad::sum_squared_error(x, rnd(seed, x.rows(), x.cols())); }

TEST(Autodiff, MatmulAddSubMul) {
  check_gradients({rnd(1, 3, 4), rnd(2, 4, 2), rnd(3, 3, 2)}, [](auto&, const auto& v) {
    auto p = ad::matmul(v[0], v[1]);
    return loss(ad::mul(ad::sub(ad::add(p, v[2]), v[2]), p));
  });
}

TEST(Autodiff, ScaleAndBroadcasts) {
  check_gradients({rnd(4, 3, 5), rnd(5, 1, 5), rnd(6, 3, 1)}, [](auto&, const auto& v) {
    return loss(ad::scale(ad::add_col_vector(ad::add_row_vector(v[0], v[1]), v[2]), 0.7));
  });
}

TEST(Autodiff, Silu) {
  check_gradients({rnd(7, 4, 6)}, [](auto&, const auto& v) { return loss(ad::silu(v[0])); });
}

TEST(Autodiff, ReshapeConcatSlice) {
  check_gradients({rnd(8, 2, 6), rnd(9, 3, 6)}, [](auto&, const auto& v) {
    auto c = ad::concat_rows(v[0], v[1]);
    auto s = ad::slice_cols(ad::slice_rows(c, 1, 3), 2, 3);
    return ad::add(loss(ad::reshape(s, 1, 9)), loss(ad::slice_rows(c, 4, 1), 5));
  });
}

TEST(Autodiff, GatherRowsAccumulatesRepeats) {
  const std::vector<int> ids{2, 0, 2, 3};
  check_gradients({rnd(10, 4, 3)}, [&](auto&, const auto& v) {
    return loss(ad::gather_rows(v[0], std::span<const int>(ids)));
  });
}

TEST(Autodiff, MixBlocks) {
  check_gradients({rnd(11, 6, 3), rnd(12, 3, 3)}, [](auto&, const auto& v) {
    return loss(ad::mix_blocks(v[0], v[1]));
  });
}

TEST(Autodiff, Conv3x3) {
  const ad::Geo geo{2, 4, 4};
  check_gradients({rnd(13, 2, geo.columns()), rnd(14, 3, 2 * 9)}, [&](auto&, const auto& v) {
    return loss(ad::conv3x3(v[0], v[1], geo));
  });
}

TEST(Autodiff, PoolUpsample) {
  const ad::Geo geo{2, 4, 4};
  check_gradients({rnd(15, 3, geo.columns())}, [&](auto&, const auto& v) {
    auto pooled = ad::avgpool2(v[0], geo);
    return loss(ad::add(ad::upsample2(pooled, geo.pooled()), v[0]));
  });
}

TEST(Autodiff, LayoutAndPerSampleScale) {
  const ad::Geo geo{3, 2, 2};
  check_gradients({rnd(16, 2, geo.columns()), rnd(17, 3, 2)}, [&](auto&, const auto& v) {
    auto s = ad::channels_to_samples(ad::scale_per_sample_channel(v[0], v[1], geo), geo);
    return loss(ad::samples_to_channels(s, geo));
  });
}

TEST(Autodiff, LayoutRoundTripIsIdentity) {
  const ad::Geo geo{3, 2, 2};
  ad::Tape<double> tape;
  const M x = rnd(18, 4, geo.columns());
  auto v = tape.constant(x);
  EXPECT_EQ(ad::samples_to_channels(ad::channels_to_samples(v, geo), geo).value(), x);
}

TEST(Autodiff, MeanSquaredErrorAndSum) {
  check_gradients({rnd(19, 3, 4)}, [](auto&, const auto& v) {
    return ad::add(ad::mean_squared_error(v[0], rnd(20, 3, 4)), ad::sum(v[0]));
  });
}

TEST(Autodiff, SoftmaxCrossEntropy) {
  const std::vector<int> labels{0, 2, 1};
  check_gradients({rnd(21, 3, 3)}, [&](auto&, const auto& v) {
    return ad::softmax_cross_entropy(v[0], std::span<const int>(labels));
  });
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  ad::Tape<double> tape;
  auto c = tape.constant(rnd(22, 2, 2));
  auto p = tape.param(rnd(23, 2, 2));
  auto root = loss(ad::matmul(c, p));
  tape.backward(root);
  EXPECT_EQ(c.grad().size(), 0);
  EXPECT_EQ(p.grad().rows(), 2);
}

TEST(Autodiff, SoftmaxRowsNormalized) {
  const auto p = ad::softmax_rows(test::random_matrix<float>(24, 5, 4, 3.0));
  for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0f, 1e-6f);
}

}  // namespace
