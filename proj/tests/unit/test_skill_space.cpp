#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "emts/nn/optim.hpp"
#include "emts/skill_space.hpp"
#include "test_support.hpp"

namespace emts {
namespace {

const KinematicsConfig kKin{};

Trajectory random_trajectory(int horizon, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), v(0.0, 20.0);
  std::vector<Action> actions(static_cast<std::size_t>(horizon));
  for (Action& a : actions) a = {u(rng), u(rng)};
  return make_trajectory({0.0, 0.0, 0.0, v(rng)}, std::move(actions), kKin);
}

Trajectory constant_arc(double throttle, double steer, double v0) {
  return make_trajectory({0.0, 0.0, 0.0, v0}, std::vector<Action>(10, Action{throttle, steer}), kKin);
}

double distance(const Vector& a, const Vector& b) { return (a - b).norm(); }

// A reduced library that trains in a couple of seconds.
const SkillTrainResult& small_trained() {
  static const SkillTrainResult result = [] {
    LibraryConfig lc;
    lc.initial_speeds = {0.0, 5.0, 10.0, 15.0, 20.0};
    lc.throttle_grid = {-1.0, -0.5, 0.0, 0.5, 1.0};
    lc.steer_grid = {-1.0, -0.5, 0.0, 0.5, 1.0};
    lc.spline_count = 200;
    SkillTrainConfig tc;
    tc.hidden = 64;
    tc.epochs = 60;
    return train_skill_space(build_library(lc, kKin), tc);
  }();
  return result;
}

TEST(SkillSpace, EncodeIsDeterministicAndZeroInit) {
  const SkillSpaceModel model(10, 8, 32, 1);
  const Trajectory t = constant_arc(0.3, -0.2, 8.0);
  const LatentDistribution a = model.encode(t);
  const LatentDistribution b = model.encode(t);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_TRUE(a.mean.isZero(0.0));
  EXPECT_TRUE((a.std.array() > 0.0).all());
}

TEST(SkillSpace, HorizonMismatchThrows) {
  const SkillSpaceModel model(10, 8, 32, 1);
  const Trajectory t = make_trajectory({}, std::vector<Action>(5), kKin);
  EXPECT_THROW(model.encode(t), std::invalid_argument);
}

TEST(SkillSpace, DecodeModesAreEquivalent) {
  const SkillSpaceModel model(10, 8, 32, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    Vector z(8);
    for (int k = 0; k < 8; ++k) z(k) = n(rng);
    const VehicleState init{1.0, -2.0, 0.4, 7.5};
    const Trajectory t = model.decode({z.data(), 8}, init, kKin);
    ASSERT_EQ(t.horizon(), 10u);
    EXPECT_EQ(t.states, rollout(init, t.actions, kKin));
    EXPECT_EQ(t, model.decode({z.data(), 8}, init, kKin));
    for (const Action& a : t.actions) {
      EXPECT_LE(std::abs(a.throttle), 1.0);
      EXPECT_LE(std::abs(a.steer), 1.0);
    }
  }
}

TEST(SkillSpace, GaussianKl) {
  EXPECT_DOUBLE_EQ(gaussian_kl_to_standard(Vector::Ones(1), Vector::Ones(1)), 0.5);
  EXPECT_EQ(gaussian_kl_to_standard(Vector::Zero(4), Vector::Ones(4)), 0.0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Vector m(3), s(3);
    for (int k = 0; k < 3; ++k) {
      m(k) = n(rng);
      s(k) = std::exp(n(rng));
    }
    ASSERT_GE(gaussian_kl_to_standard(m, s), 0.0);
  }
}

TEST(SkillSpace, ZetaZeroIsPureReconstruction) {
  const SkillSpaceModel model(10, 8, 32, 5);
  std::mt19937_64 gen(6);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 8; ++i) trajs.push_back(random_trajectory(10, gen));
  std::vector<const Trajectory*> batch;
  for (const Trajectory& t : trajs) batch.push_back(&t);
  std::mt19937_64 a(1), b(1);
  const ElboTerms off = elbo_loss(model, batch, 0.0, a);
  const ElboTerms on = elbo_loss(model, batch, 0.5, b);
  EXPECT_EQ(off.loss, off.reconstruction);
  EXPECT_EQ(on.reconstruction, off.reconstruction);
  EXPECT_DOUBLE_EQ(on.loss, on.reconstruction + 0.5 * on.kl);
}

TEST(SkillSpace, ElboGradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 5; ++trial) {
    SkillSpaceModel model(4, 2, 5, 100 + static_cast<std::uint64_t>(trial));
    // Move the zero-initialised encoder output off zero so every path is exercised.
    for (auto s : model.encoder().parameter_spans())
      for (double& p : s) p += 0.1 * std::normal_distribution<double>(0.0, 1.0)(gen);
    std::vector<Trajectory> trajs;
    for (int i = 0; i < 3; ++i) trajs.push_back(random_trajectory(4, gen));
    std::vector<const Trajectory*> batch;
    for (const Trajectory& t : trajs) batch.push_back(&t);
    SkillSpaceGrads grads{model.encoder().zeros_like(), model.decoder().zeros_like()};
    std::mt19937_64 noise(9);
    elbo_loss(model, batch, 0.3, noise, &grads);
    auto params = model.encoder().parameter_spans();
    auto more = model.decoder().parameter_spans();
    params.insert(params.end(), more.begin(), more.end());
    auto analytic = std::as_const(grads.encoder).parameter_spans();
    auto more_g = std::as_const(grads.decoder).parameter_spans();
    analytic.insert(analytic.end(), more_g.begin(), more_g.end());
    const auto check = testing::check_gradients(
        params, analytic,
        [&] {
          std::mt19937_64 same(9);
          return elbo_loss(model, batch, 0.3, same).loss;
        },
        gen, 300, 1e-6, 1e-8);
    EXPECT_LT(check.max_rel_error, 1e-4) << "trial " << trial;
  }
}

// The stochastic ELBO jitters with the reparameterization noise, so progress is
// tracked on the deterministic mean-decode error.
TEST(SkillSpace, SingleTrajectoryOverfitsMonotonically) {
  SkillSpaceModel model(10, 8, 32, 4);
  const Trajectory t = constant_arc(0.4, -0.3, 6.0);
  const std::vector<const Trajectory*> batch{&t};
  nn::Adam adam({.learning_rate = 1e-3});
  std::mt19937_64 rng(5);
  double prev = reconstruction_mse(model, batch);
  for (int step = 0; step < 50; ++step) {
    SkillSpaceGrads grads{model.encoder().zeros_like(), model.decoder().zeros_like()};
    elbo_loss(model, batch, 0.0, rng, &grads);
    auto params = model.encoder().parameter_spans();
    auto more = model.decoder().parameter_spans();
    params.insert(params.end(), more.begin(), more.end());
    auto g = std::as_const(grads.encoder).parameter_spans();
    auto more_g = std::as_const(grads.decoder).parameter_spans();
    g.insert(g.end(), more_g.begin(), more_g.end());
    adam.step(params, g);
    const double now = reconstruction_mse(model, batch);
    EXPECT_LT(now, prev) << "step " << step;
    prev = now;
  }
}

TEST(SkillSpace, TrainingIsDeterministic) {
  LibraryConfig lc;
  lc.polynomial = false;
  lc.spline_count = 30;
  lc.initial_speeds = {5.0};
  SkillTrainConfig tc;
  tc.hidden = 16;
  tc.epochs = 3;
  const TrajectoryLibrary lib = build_library(lc, kKin);
  const SkillTrainResult a = train_skill_space(lib, tc);
  const SkillTrainResult b = train_skill_space(lib, tc);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_TRUE(a.model.encoder() == b.model.encoder());
  EXPECT_TRUE(a.model.decoder() == b.model.decoder());
}

TEST(SkillSpace, HoldoutSplitIsDisjoint) {
  const SkillTrainResult& r = small_trained();
  std::vector<bool> seen(r.train_indices.size() + r.holdout_indices.size(), false);
  for (auto i : r.train_indices) seen.at(i) = true;
  for (auto i : r.holdout_indices) {
    EXPECT_FALSE(seen.at(i));
    seen.at(i) = true;
  }
  EXPECT_NEAR(static_cast<double>(r.holdout_indices.size()) / static_cast<double>(seen.size()), 0.1, 0.01);
}

TEST(SkillSpace, TrainedModelReconstructsAndOrdersLatents) {
  const SkillTrainResult& r = small_trained();
  EXPECT_LT(r.holdout_mse, 0.05);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  const auto a = r.model.encode(constant_arc(0.5, 0.8, 10.0)).mean;
  const auto b = r.model.encode(constant_arc(0.5, 0.78, 10.0)).mean;
  const auto c = r.model.encode(constant_arc(0.5, -0.8, 10.0)).mean;
  EXPECT_LT(distance(a, b), distance(a, c));
}

TEST(SkillSpace, CheckpointRoundTrip) {
  const SkillSpaceModel model(10, 8, 16, 3);
  const SkillSpaceModel back = SkillSpaceModel::from_checkpoint(model.to_checkpoint());
  EXPECT_TRUE(back.encoder() == model.encoder());
  EXPECT_TRUE(back.decoder() == model.decoder());
  EXPECT_EQ(back.horizon(), 10);
  EXPECT_EQ(back.latent_dim(), 8);
}

}  // namespace
}  // namespace emts
