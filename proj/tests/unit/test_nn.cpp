#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "emts/nn/checkpoint.hpp"
#include "emts/nn/gmm.hpp"
#include "emts/nn/mlp.hpp"
#include "emts/nn/optim.hpp"
#include "test_support.hpp"

namespace emts::nn {
namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<int> random_widths(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> w(1, 7), depth(1, 3);
  std::vector<int> widths{w(rng)};
  for (int i = depth(rng); i >= 0; --i) widths.push_back(w(rng));
  return widths;
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  Mlp net({DenseLayer{Matrix::Zero(3, 4), Vector::Zero(3)}, DenseLayer{Matrix::Zero(2, 3), Vector::Zero(2)}});
  EXPECT_TRUE(net.forward(Vector(Vector::Ones(4))).isZero(0.0));
}

TEST(Mlp, IdentityLinearLayer) {
  Mlp net({DenseLayer{Matrix::Identity(3, 3), Vector::Zero(3)}});
  const Vector x = (Vector(3) << 0.5, -2.0, 7.0).finished();
  EXPECT_EQ(net.forward(x), x);
}

TEST(Mlp, ForwardIsDeterministic) {
  std::mt19937_64 rng(3);
  Mlp net({5, 8, 8, 2}, rng);
  const Matrix x = random_matrix(5, 4, rng);
  EXPECT_EQ(net.forward(x), net.forward(x));
  // Batched and single-column evaluation agree.
  const Matrix y = net.forward(x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) EXPECT_TRUE(y.col(c).isApprox(net.forward(Vector(x.col(c))), 1e-14));
}

TEST(Mlp, ShapeMismatchThrows) {
  std::mt19937_64 rng(3);
  Mlp net({5, 4, 2}, rng);
  EXPECT_THROW(net.forward(Vector(Vector::Zero(4))), std::invalid_argument);
  EXPECT_THROW(Mlp({DenseLayer{Matrix::Zero(3, 4), Vector::Zero(3)}, DenseLayer{Matrix::Zero(2, 2), Vector::Zero(2)}}),
               std::invalid_argument);
}

TEST(Mlp, ZeroOutputInit) {
  std::mt19937_64 rng(4);
  Mlp net({3, 6, 2}, rng, OutputInit::Zero);
  EXPECT_TRUE(net.forward(Vector(Vector::Ones(3))).isZero(0.0));
  EXPECT_FALSE(net.layers().front().weight.isZero(0.0));
}

TEST(MlpBackward, ZeroOutputGradient) {
  std::mt19937_64 rng(5);
  Mlp net({4, 6, 3}, rng);
  MlpTape tape;
  net.forward(random_matrix(4, 2, rng), tape);
  Mlp grads = net.zeros_like();
  net.backward(tape, Matrix::Zero(3, 2), &grads);
  for (auto s : std::as_const(grads).parameter_spans())
    for (double g : s) EXPECT_EQ(g, 0.0);
}

TEST(MlpBackward, LinearLayerOuterProduct) {
  std::mt19937_64 rng(6);
  Mlp net({DenseLayer{random_matrix(3, 4, rng), Vector(random_matrix(3, 1, rng))}});
  const Matrix x = random_matrix(4, 1, rng);
  const Matrix gy = random_matrix(3, 1, rng);
  MlpTape tape;
  net.forward(x, tape);
  Mlp grads = net.zeros_like();
  const Matrix gx = net.backward(tape, gy, &grads);
  EXPECT_TRUE(grads.layers()[0].weight.isApprox(gy * x.transpose(), 1e-14));
  EXPECT_TRUE(grads.layers()[0].bias.isApprox(Vector(gy.col(0)), 1e-14));
  EXPECT_TRUE(gx.isApprox(net.layers()[0].weight.transpose() * gy, 1e-14));
}

TEST(MlpBackward, FiniteDifferenceProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const auto widths = random_widths(rng);
    Mlp net(widths, rng);
    const Matrix x = random_matrix(widths.front(), 3, rng);
    const Matrix c = random_matrix(widths.back(), 3, rng);
    MlpTape tape;
    net.forward(x, tape);
    Mlp grads = net.zeros_like();
    net.backward(tape, c, &grads);
    const auto check = emts::testing::check_gradients(
        net.parameter_spans(), std::as_const(grads).parameter_spans(),
        [&] { return (net.forward(x).array() * c.array()).sum(); }, rng, 200, 1e-5);
    EXPECT_LT(check.max_rel_error, 1e-4) << "trial " << trial;
  }
}

TEST(MlpBackward, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Mlp net({4, 5, 5, 2}, rng);
  Matrix x = random_matrix(4, 1, rng);
  const Matrix c = random_matrix(2, 1, rng);
  MlpTape tape;
  net.forward(x, tape);
  const Matrix gx = net.backward(tape, c, nullptr);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double saved = x(i, 0);
    x(i, 0) = saved + 1e-5;
    const double up = (net.forward(x).array() * c.array()).sum();
    x(i, 0) = saved - 1e-5;
    const double down = (net.forward(x).array() * c.array()).sum();
    x(i, 0) = saved;
    EXPECT_NEAR(gx(i, 0), (up - down) / 2e-5, 1e-8);
  }
}

TEST(Gmm, StandardNormalAtMean) {
  const GmmPolicy p{{1.0}, {Vector::Zero(1)}, {Vector::Ones(1)}};
  const double z = 0.0;
  EXPECT_NEAR(gmm_log_prob(p, {&z, 1}), -0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(gmm_log_prob(p, {&z, 1}), -0.9189385332, 1e-9);
}

TEST(Gmm, DuplicateComponentsMatchSingle) {
  std::mt19937_64 rng(9);
  const Vector m = random_matrix(3, 1, rng);
  const Vector s = random_matrix(3, 1, rng).array().abs() + 0.1;
  const GmmPolicy one{{1.0}, {m}, {s}};
  const GmmPolicy two{{0.5, 0.5}, {m, m}, {s, s}};
  for (int i = 0; i < 20; ++i) {
    const Vector z = random_matrix(3, 1, rng);
    EXPECT_NEAR(gmm_log_prob(one, {z.data(), 3}), gmm_log_prob(two, {z.data(), 3}), 1e-12);
  }
}

TEST(Gmm, SymmetricMixture) {
  const Vector mu = (Vector(2) << 1.5, -0.5).finished();
  const GmmPolicy p{{0.5, 0.5}, {mu, Vector(-mu)}, {Vector::Ones(2), Vector::Ones(2)}};
  const Vector neg = -mu;
  EXPECT_DOUBLE_EQ(gmm_log_prob(p, {mu.data(), 2}), gmm_log_prob(p, {neg.data(), 2}));
}

TEST(Gmm, FiniteForTinyStds) {
  const GmmPolicy p{{0.3, 0.7}, {Vector::Zero(4), Vector::Constant(4, 50.0)}, {Vector::Constant(4, kMinStd),
                                                                              Vector::Constant(4, kMinStd)}};
  const Vector z = Vector::Constant(4, 25.0);
  EXPECT_TRUE(std::isfinite(gmm_log_prob(p, {z.data(), 4})));
}

TEST(Gmm, DegenerateSampleIsMean) {
  std::mt19937_64 rng(10);
  const Vector mu = (Vector(3) << 0.1, 0.2, -0.3).finished();
  const GmmPolicy p{{1.0}, {mu}, {Vector::Constant(3, 1e-9)}};
  EXPECT_TRUE(gmm_sample(p, rng).isApprox(mu, 1e-6));
}

TEST(Gmm, OneHotWeightsPickComponentZero) {
  std::mt19937_64 rng(11);
  const GmmPolicy p{{1.0, 0.0, 0.0},
                    {Vector::Constant(1, -100.0), Vector::Zero(1), Vector::Constant(1, 100.0)},
                    {Vector::Ones(1), Vector::Ones(1), Vector::Ones(1)}};
  for (int i = 0; i < 1000; ++i) ASSERT_LT(gmm_sample(p, rng)(0), -90.0);
}

TEST(Gmm, ComponentFrequenciesWithinThreeSigma) {
  std::mt19937_64 rng(12);
  const std::vector<double> w{0.2, 0.5, 0.3};
  const GmmPolicy p{w,
                    {Vector::Constant(1, -100.0), Vector::Zero(1), Vector::Constant(1, 100.0)},
                    {Vector::Ones(1), Vector::Ones(1), Vector::Ones(1)}};
  const int n = 10000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) {
    const double x = gmm_sample(p, rng)(0);
    ++counts[x < -50.0 ? 0 : (x > 50.0 ? 2 : 1)];
  }
  for (int k = 0; k < 3; ++k) {
    const double sigma = std::sqrt(n * w[static_cast<std::size_t>(k)] * (1.0 - w[static_cast<std::size_t>(k)]));
    EXPECT_LT(std::abs(counts[static_cast<std::size_t>(k)] - n * w[static_cast<std::size_t>(k)]), 3.0 * sigma);
  }
}

TEST(Gmm, SamplingIsReproducible) {
  const GmmPolicy p{{0.4, 0.6}, {Vector::Zero(2), Vector::Ones(2)}, {Vector::Ones(2), Vector::Ones(2)}};
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(gmm_sample(p, a), gmm_sample(p, b));
}

TEST(Gmm, ValidateRejectsBadPolicies) {
  EXPECT_THROW((GmmPolicy{{0.5, 0.4}, {Vector::Zero(1), Vector::Zero(1)}, {Vector::Ones(1), Vector::Ones(1)}}
                    .validate()),
               std::invalid_argument);
  EXPECT_THROW((GmmPolicy{{1.0}, {Vector::Zero(1)}, {Vector::Zero(1)}}.validate()), std::invalid_argument);
}

TEST(GmmHead, DecodedWeightsFormDistribution) {
  std::mt19937_64 rng(13);
  const GmmHead head{3, 4, kMinStd};
  for (int i = 0; i < 50; ++i) {
    const Vector raw = 5.0 * random_matrix(head.size(), 1, rng);
    const GmmPolicy p = head.decode({raw.data(), static_cast<std::size_t>(raw.size())});
    EXPECT_NO_THROW(p.validate());
  }
}

TEST(GmmHead, LogProbMatchesDecodedMixture) {
  std::mt19937_64 rng(14);
  const GmmHead head{2, 3, kMinStd};
  const Vector raw = random_matrix(head.size(), 1, rng);
  const Vector z = random_matrix(3, 1, rng);
  const std::span<const double> r(raw.data(), static_cast<std::size_t>(raw.size()));
  EXPECT_NEAR(head.log_prob(r, {z.data(), 3}), gmm_log_prob(head.decode(r), {z.data(), 3}), 1e-12);
}

// Components far from z carry gradients near 1e-10, below what a central difference of a
// log-density of magnitude ~10 can resolve, hence the 1e-6 floor.
TEST(GmmHead, GradientFiniteDifferenceProperty) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const GmmHead head{1 + trial % 3, 1 + trial % 4, kMinStd};
    Vector raw = random_matrix(head.size(), 1, rng);
    const Vector z = 1.5 * random_matrix(head.dim, 1, rng);
    std::vector<double> grad(static_cast<std::size_t>(head.size()), 0.0);
    const std::span<double> r(raw.data(), static_cast<std::size_t>(raw.size()));
    const std::span<const double> zs(z.data(), static_cast<std::size_t>(z.size()));
    auto f = [&] { return head.log_prob(r, zs); };
    head.log_prob(r, zs, grad);
    const auto check = emts::testing::check_gradients({r},
                                                      {{grad.data(), grad.size()}}, f, rng, 100, 1e-5, 1e-6);
    EXPECT_LT(check.max_rel_error, 1e-4) << "trial " << trial;
  }
}

TEST(Adam, ZeroGradientNoDecayLeavesParams) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  Adam opt({.learning_rate = 0.1});
  ASSERT_TRUE(opt.step({{p.data(), 2}}, {{g.data(), 2}}));
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
  for (double g0 : {3.0, -0.02}) {
    std::vector<double> p{0.5}, g{g0};
    Adam opt({.learning_rate = 0.01});
    opt.step({{p.data(), 1}}, {{g.data(), 1}});
    const double expected = 0.5 - 0.01 * g0 / (std::abs(g0) + 1e-8);
    EXPECT_NEAR(p[0], expected, 1e-15);
  }
}

TEST(Adam, DecayOnlyShrinksNorm) {
  std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
  Adam opt({.learning_rate = 0.1, .weight_decay = 0.01});
  double prev = 14.0;
  for (int i = 0; i < 5; ++i) {
    opt.step({{p.data(), 3}}, {{g.data(), 3}});
    const double norm = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    EXPECT_LT(norm, prev);
    prev = norm;
  }
}

TEST(Adam, NonFiniteGradientIsSkipped) {
  std::vector<double> p{1.0}, g{std::nan("")};
  Adam opt;
  EXPECT_FALSE(opt.step({{p.data(), 1}}, {{g.data(), 1}}));
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(opt.skipped(), 1);
  EXPECT_EQ(opt.steps(), 0);
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(16);
  Checkpoint c;
  c.meta = {{"kind", "test"}, {"seed", 16}};
  c.nets.push_back({"a", Mlp({3, 5, 2}, rng)});
  c.nets.push_back({"b", Mlp({2, 1}, rng)});
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 6), "EMTSW1");
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.meta, c.meta);
  EXPECT_TRUE(back.net("a") == c.nets[0].net);
  EXPECT_TRUE(back.net("b") == c.nets[1].net);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::mt19937_64 rng(17);
  Checkpoint c;
  c.nets.push_back({"a", Mlp({3, 2}, rng)});
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_ANY_THROW(deserialize_checkpoint("EMTSW0" + bytes.substr(6)));
  EXPECT_ANY_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)));
  EXPECT_ANY_THROW(c.net("missing"));
}

}  // namespace
}  // namespace emts::nn
