#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "emts/errors.hpp"
#include "emts/expert_intents.hpp"
#include "emts/nn/checkpoint.hpp"
#include "test_support.hpp"

namespace emts {
namespace {

ExpertDataset dataset_with_lengths(const std::vector<int>& lengths) {
  ExpertDataset d;
  int counter = 0;
  for (int len : lengths) {
    ExpertEpisode ep;
    for (int i = 0; i < len; ++i) {
      Observation o(obs::kDim, 0.0);
      o[0] = static_cast<double>(counter++);
      ep.observations.push_back(o);
      ep.actions.push_back({0.1, -0.1});
    }
    d.episodes.push_back(ep);
  }
  return d;
}

// Probe: ego in the middle lane at 10 m/s, nothing else around.
Observation empty_road(double speed = 10.0, double lateral = 0.0) {
  Observation o(obs::kDim, 0.0);
  o[obs::kEgoSpeed] = speed / 20.0;
  o[obs::kLateral] = lateral / obs::kLateralScale;
  o[obs::kNavigation] = 1.0;
  return o;
}

Observation with_leader(double gap, double rel_speed, double speed = 10.0) {
  Observation o = empty_road(speed);
  o[obs::kVehicles] = gap / obs::kRange;
  o[obs::kVehicles + 2] = rel_speed / 20.0;
  o[obs::kVehicles + 3] = 1.0;
  return o;
}

ExpertContext corridor_context() {
  ExpertContext ctx;
  ctx.lane_offsets = {-3.5, 0.0, 3.5};
  return ctx;
}

TEST(ExtractSegments, Counting) {
  EXPECT_EQ(extract_segments(dataset_with_lengths({10}), 10, 1).size(), 1u);
  EXPECT_EQ(extract_segments(dataset_with_lengths({12}), 10, 1).size(), 3u);
  EXPECT_EQ(extract_segments(dataset_with_lengths({35}), 10, 10).size(), 3u);
  EXPECT_EQ(extract_segments(dataset_with_lengths({12, 9, 20}), 10, 5).size(), 1u + 0u + 3u);
  EXPECT_THROW(extract_segments(dataset_with_lengths({9}), 10, 1), ConfigError);
}

TEST(ExtractSegments, WindowsStartAtTheirObservation) {
  const auto segs = extract_segments(dataset_with_lengths({12, 15}), 10, 2);
  ASSERT_EQ(segs.size(), 2u + 3u);
  EXPECT_EQ(segs[0].o1[0], 0.0);
  EXPECT_EQ(segs[1].o1[0], 2.0);
  EXPECT_EQ(segs[2].o1[0], 12.0);  // second episode, never crossing the boundary
  for (const SegmentPair& s : segs) EXPECT_EQ(s.tau.size(), 10u);
}

TEST(ScriptedExpert, LaneKeeperOnEmptyRoad) {
  const ExpertContext ctx = corridor_context();
  const Action centred = scripted_expert_act(ExpertStyle::LaneKeeper, empty_road(), ctx);
  EXPECT_GT(centred.throttle, 0.0);
  EXPECT_NEAR(centred.steer, 0.0, 1e-9);
  // Drifted left of the lane centre: steer back to the right.
  EXPECT_LT(scripted_expert_act(ExpertStyle::LaneKeeper, empty_road(10.0, 0.8), ctx).steer, 0.0);
  EXPECT_GT(scripted_expert_act(ExpertStyle::LaneKeeper, empty_road(10.0, -0.8), ctx).steer, 0.0);
}

TEST(ScriptedExpert, CautiousBrakesForCloseLeader) {
  EXPECT_LE(scripted_expert_act(ExpertStyle::Cautious, with_leader(5.0, 0.0), corridor_context()).throttle, 0.0);
}

TEST(ScriptedExpert, StylesDisagreeOnProbe) {
  const Observation probe = with_leader(14.0, -4.0, 12.0);
  const ExpertContext ctx = corridor_context();
  const Action a = scripted_expert_act(ExpertStyle::Cautious, probe, ctx);
  const Action b = scripted_expert_act(ExpertStyle::Assertive, probe, ctx);
  const Action c = scripted_expert_act(ExpertStyle::LaneKeeper, probe, ctx);
  EXPECT_NE(a, b);
  EXPECT_NE(b, c);
  EXPECT_NE(a, c);
  EXPECT_EQ(a, scripted_expert_act(ExpertStyle::Cautious, probe, ctx));
}

TEST(ScriptedExpert, ActionsStayInRange) {
  std::mt19937_64 rng(2);
  const ExpertContext ctx = corridor_context();
  for (int i = 0; i < 2000; ++i) {
    const Observation o = testing::random_observation(rng);
    for (ExpertStyle s : kAllExpertStyles) {
      const Action a = scripted_expert_act(s, o, ctx);
      ASSERT_LE(std::abs(a.throttle), 1.0);
      ASSERT_LE(std::abs(a.steer), 1.0);
    }
  }
}

TEST(ScriptedExpert, StyleNames) {
  for (ExpertStyle s : kAllExpertStyles) EXPECT_EQ(expert_style_from_string(to_string(s)), s);
  EXPECT_THROW(expert_style_from_string("reckless"), std::invalid_argument);
}

TEST(ExpertData, GenerationIsDeterministicAcrossWorkers) {
  ExpertDataConfig cfg;
  cfg.episodes = 4;
  const ExpertDataset a = generate_expert_data(ExpertStyle::Cautious, 0, cfg, 1);
  const ExpertDataset b = generate_expert_data(ExpertStyle::Cautious, 0, cfg, 2);
  ASSERT_EQ(a.episodes.size(), b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    EXPECT_EQ(a.episodes[i].observations, b.episodes[i].observations);
    EXPECT_EQ(a.episodes[i].actions, b.episodes[i].actions);
  }
  for (const ExpertEpisode& ep : a.episodes) {
    EXPECT_GE(ep.actions.size(), static_cast<std::size_t>(cfg.min_length));
    EXPECT_EQ(ep.actions.size(), ep.observations.size());
  }
}

TEST(ExpertData, JsonlRoundTrip) {
  ExpertDataConfig cfg;
  cfg.episodes = 2;
  const ExpertDataset d = generate_expert_data(ExpertStyle::Assertive, 1, cfg);
  const auto path = std::filesystem::temp_directory_path() / "emts_expert_roundtrip.jsonl";
  d.write_jsonl(path, {{"seed", cfg.seed}});
  const ExpertDataset back = ExpertDataset::read_jsonl(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.style, d.style);
  ASSERT_EQ(back.episodes.size(), d.episodes.size());
  for (std::size_t i = 0; i < d.episodes.size(); ++i) {
    EXPECT_EQ(back.episodes[i].observations, d.episodes[i].observations);
    EXPECT_EQ(back.episodes[i].actions, d.episodes[i].actions);
    EXPECT_EQ(back.episodes[i].cause, d.episodes[i].cause);
  }
  EXPECT_THROW(ExpertDataset::read_jsonl("/nonexistent/emts.jsonl"), ConfigError);
}

TEST(IntentEncoder, DensityShape) {
  std::mt19937_64 rng(3);
  IntentEncoder enc(obs::kDim, 3, 16, 4);
  for (auto s : enc.net().parameter_spans())
    for (double& p : s) p += 0.2 * std::normal_distribution<double>(0.0, 1.0)(rng);
  const Observation o = testing::random_observation(rng);
  const LatentDistribution q = enc.distribution(o);
  const double at_mean = enc.density(o, {q.mean.data(), 3});
  for (int i = 0; i < 100; ++i) {
    Vector d(3);
    for (int k = 0; k < 3; ++k) d(k) = std::normal_distribution<double>(0.0, 0.5)(rng);
    const Vector plus = q.mean + d, minus = q.mean - d;
    const double dp = enc.density(o, {plus.data(), 3});
    EXPECT_LE(dp, at_mean);
    EXPECT_NEAR(dp, enc.density(o, {minus.data(), 3}), 1e-12 * at_mean);
    EXPECT_NEAR(std::log(dp), enc.log_density(o, {plus.data(), 3}), 1e-9);
  }
}

TEST(IntentEncoder, DensityIntegratesToOne) {
  std::mt19937_64 rng(5);
  IntentEncoder enc(obs::kDim, 2, 8, 6);
  for (auto s : enc.net().parameter_spans())
    for (double& p : s) p += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
  const Observation o = testing::random_observation(rng);
  const LatentDistribution q = enc.distribution(o);
  // Midpoint rule over +-8 std in each dimension.
  const int n = 400;
  double total = 0.0;
  const double hx = 16.0 * q.std(0) / n, hy = 16.0 * q.std(1) / n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double z[2] = {q.mean(0) - 8.0 * q.std(0) + (i + 0.5) * hx, q.mean(1) - 8.0 * q.std(1) + (j + 0.5) * hy};
      total += enc.density(o, z) * hx * hy;
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(IntentEncoder, Sampling) {
  std::mt19937_64 rng(7);
  IntentEncoder enc(obs::kDim, 4, 8, 8);
  const Observation o = testing::random_observation(rng);
  std::mt19937_64 a(1), b(1);
  EXPECT_EQ(enc.sample(o, a), enc.sample(o, b));

  IntentEncoder tight = enc;
  tight.set_min_std(1e-9);
  // Push the log-std head far negative so the floor is what remains.
  tight.net().layers().back().bias.tail(4).setConstant(-40.0);
  EXPECT_TRUE(tight.sample(o, a).isApprox(tight.distribution(o).mean, 1e-6));

  const LatentDistribution q = enc.distribution(o);
  const int n = 10000;
  Vector sum = Vector::Zero(4);
  for (int i = 0; i < n; ++i) sum += enc.sample(o, rng);
  const Vector mean = sum / n;
  for (int k = 0; k < 4; ++k) EXPECT_LT(std::abs(mean(k) - q.mean(k)), 3.0 * q.std(k) / std::sqrt(double(n)));
}

TEST(IntentEncoder, CheckpointRoundTrip) {
  std::vector<IntentEncoder> encs{IntentEncoder(obs::kDim, 8, 16, 1, 0, "cautious"),
                                  IntentEncoder(obs::kDim, 8, 16, 2, 1, "assertive")};
  const auto back = intents_from_checkpoint(nn::deserialize_checkpoint(nn::serialize_checkpoint(
      intents_to_checkpoint(encs))));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(back[i].net() == encs[i].net());
    EXPECT_EQ(back[i].style(), encs[i].style());
    EXPECT_EQ(back[i].expert_id(), encs[i].expert_id());
    EXPECT_EQ(back[i].min_std(), encs[i].min_std());
  }
}

// Segments decoded from a known smooth map o -> z*, so a perfect encoder exists.
std::vector<SegmentPair> synthetic_segments(const SkillSpaceModel& skills, int count, std::mt19937_64& rng) {
  Matrix proj(skills.latent_dim(), obs::kDim);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = n(rng);
  std::vector<SegmentPair> out;
  for (int i = 0; i < count; ++i) {
    Observation o = testing::random_observation(rng);
    o[obs::kEgoSpeed] = 0.5 * (o[obs::kEgoSpeed] + 1.0);
    const Vector z = (proj * Eigen::Map<const Vector>(o.data(), obs::kDim)).array().tanh();
    out.push_back({o, skills.decode_actions({z.data(), static_cast<std::size_t>(z.size())}, observed_speed(o))});
  }
  return out;
}

TEST(IntentTraining, RecoversDecoderSynthesizedIntents) {
  std::mt19937_64 rng(9);
  const SkillSpaceModel skills(10, 4, 32, 10);
  const std::string before = nn::serialize_checkpoint(skills.to_checkpoint());
  const auto segments = synthetic_segments(skills, 400, rng);
  IntentTrainConfig cfg;
  cfg.epochs = 400;
  cfg.hidden = 64;
  const IntentTrainResult r = train_intent_encoder(segments, skills, cfg);
  EXPECT_LT(intent_mse(r.encoder, skills, segments), 1e-3);
  EXPECT_EQ(nn::serialize_checkpoint(skills.to_checkpoint()), before);
}

TEST(IntentTraining, SingleSegmentLossDecreases) {
  std::mt19937_64 rng(11);
  const SkillSpaceModel skills(10, 4, 32, 12);
  const auto segments = synthetic_segments(skills, 1, rng);
  IntentTrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 1;
  cfg.nll_weight = 0.0;
  cfg.learning_rate = 1e-4;
  const IntentTrainResult r = train_intent_encoder(segments, skills, cfg);
  ASSERT_EQ(r.step_losses.size(), 50u);
  for (std::size_t i = 1; i < r.step_losses.size(); ++i)
    EXPECT_LT(r.step_losses[i], r.step_losses[i - 1]) << "step " << i;
}

// The likelihood term deliberately does not pull on the mean, so the exact check
// runs on the reconstruction path alone.
TEST(IntentTraining, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const SkillSpaceModel skills(4, 2, 6, 14);
  const auto segments = synthetic_segments(skills, 5, rng);
  std::vector<const SegmentPair*> batch;
  for (const SegmentPair& s : segments) batch.push_back(&s);
  IntentEncoder enc(obs::kDim, 2, 6, 15);
  for (auto s : enc.net().parameter_spans())
    for (double& p : s) p += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
  nn::Mlp grads = enc.net().zeros_like();
  intent_loss(enc, skills, batch, 0.0, &grads);
  const auto check = testing::check_gradients(
      enc.net().parameter_spans(), std::as_const(grads).parameter_spans(),
      [&] { return intent_loss(enc, skills, batch, 0.0).total; }, rng, 300, 1e-6, 1e-8);
  EXPECT_LT(check.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace emts
