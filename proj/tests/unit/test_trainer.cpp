#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "emts/errors.hpp"
#include "emts/trainer.hpp"
#include "test_support.hpp"

namespace emts {
namespace {

const SkillSpaceModel& tiny_skills() {
  static const SkillSpaceModel skills(10, 3, 16, 1);
  return skills;
}

SearchConfig tiny_search() {
  SearchConfig s;
  s.num_atoms = 4;
  s.num_simulations = 6;
  return s;
}

ScenarioConfig corridor(double density = 0.2) {
  ScenarioConfig c;
  c.density = density;
  return c;
}

TrainInputs tiny_inputs(const std::vector<IntentEncoder>* experts) {
  TrainInputs in;
  in.scenario = corridor();
  in.search = tiny_search();
  in.model = ModelConfig{.state_dim = 8, .hidden = 16};
  in.train.env_step_budget = 300;
  in.train.eval_interval = 100;
  in.train.eval_episodes = 1;
  in.train.batch_size = 8;
  in.train.replay_capacity = 200;
  in.train.grad_steps_per_episode = 3;
  in.train.unroll = 2;
  in.train.td_steps = 2;
  in.skills = &tiny_skills();
  in.experts = experts;
  return in;
}

std::vector<IntentEncoder> tiny_experts() {
  return {IntentEncoder(obs::kDim, 3, 8, 2, 0, "cautious"), IntentEncoder(obs::kDim, 3, 8, 3, 1, "assertive")};
}

TEST(GammaSchedule, LinearDecay) {
  TrainConfig c;
  c.env_step_budget = 1000;
  EXPECT_DOUBLE_EQ(gamma_at(c, 0), 0.5);
  EXPECT_DOUBLE_EQ(gamma_at(c, 250), 0.25);
  EXPECT_DOUBLE_EQ(gamma_at(c, 500), 0.0);
  EXPECT_DOUBLE_EQ(gamma_at(c, 900), 0.0);
}

TEST(SelfPlay, OneSkillBudgetGivesOneEntry) {
  const ModelBundle model(obs::kDim, 3, ModelConfig{.state_dim = 8, .hidden = 16}, 4);
  DrivingEnv env(corridor());
  std::mt19937_64 rng(5);
  env.reset(rng);
  const SelfPlayResult r = self_play_episode(env, model, {}, tiny_skills(), tiny_search(), rng, 1);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_EQ(r.metrics.skills, 1);
  EXPECT_EQ(static_cast<int>(r.entries[0].actions.size()), r.metrics.env_steps);
}

TEST(SelfPlay, EpisodeLinkageAndReexecution) {
  const ModelBundle model(obs::kDim, 3, ModelConfig{.state_dim = 8, .hidden = 16}, 6);
  const auto experts = tiny_experts();
  ScenarioConfig sc = corridor(0.4);
  sc.step_cap = 120;
  DrivingEnv env(sc);
  std::mt19937_64 env_rng(7), rng(8);
  env.reset(env_rng);
  const SelfPlayResult r = self_play_episode(env, model, experts, tiny_skills(), tiny_search(), rng);
  ASSERT_FALSE(r.entries.empty());
  for (std::size_t i = 0; i + 1 < r.entries.size(); ++i) EXPECT_FALSE(r.entries[i].done);
  EXPECT_TRUE(r.entries.back().done);
  int steps = 0;
  for (const ReplayEntry& e : r.entries) steps += static_cast<int>(e.actions.size());
  EXPECT_EQ(steps, r.metrics.env_steps);

  DrivingEnv fresh(sc);
  std::mt19937_64 again(7);
  fresh.reset(again);
  for (const ReplayEntry& e : r.entries) {
    EXPECT_EQ(fresh.observe(), e.observation);
    double u = 0.0;
    for (const Action& a : e.actions) u += fresh.step(a).reward;
    EXPECT_EQ(u, e.reward);
  }
  EXPECT_EQ(fresh.cause(), r.metrics.cause);
}

TEST(TrainLoop, ZeroGradientStepsKeepInitialWeights) {
  TrainInputs in = tiny_inputs(nullptr);
  in.train.grad_steps_per_episode = 0;
  const TrainOutput out = train_loop(in);
  EXPECT_EQ(out.grad_steps, 0);
  EXPECT_TRUE(out.model == ModelBundle(obs::kDim, 3, in.model, in.train.seed));
  EXPECT_GE(out.env_steps, in.train.env_step_budget);
}

TEST(TrainLoop, TwoWorkersWriteOneRowPerEvaluation) {
  const auto experts = tiny_experts();
  TrainInputs in = tiny_inputs(&experts);
  in.train.workers = 2;
  in.out_dir = std::filesystem::temp_directory_path() / "emts_train_two_workers";
  std::filesystem::remove_all(in.out_dir);
  const TrainOutput out = train_loop(in);
  EXPECT_EQ(out.rows.size(), 4u);  // steps 0, 100, 200, 300
  std::ifstream csv(in.out_dir / "metrics.csv");
  std::string line;
  int data_rows = 0;
  bool saw_header = false;
  while (std::getline(csv, line)) {
    if (line.starts_with("#")) continue;
    if (line == kMetricsHeader) {
      saw_header = true;
      continue;
    }
    ++data_rows;
  }
  EXPECT_TRUE(saw_header);
  EXPECT_EQ(data_rows, 4);
  EXPECT_TRUE(std::filesystem::exists(in.out_dir / "model.ckpt"));
  std::filesystem::remove_all(in.out_dir);
}

TEST(TrainLoop, SingleWorkerIsDeterministic) {
  const auto experts = tiny_experts();
  const TrainInputs in = tiny_inputs(&experts);
  const TrainOutput a = train_loop(in);
  const TrainOutput b = train_loop(in);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(format_metrics_row(a.rows[i]), format_metrics_row(b.rows[i]));
  EXPECT_TRUE(a.model == b.model);
  EXPECT_GT(a.grad_steps, 0);
  EXPECT_DOUBLE_EQ(a.rows.front().gamma, 0.5);
}

TEST(TrainLoop, BaselineIgnoresExperts) {
  const auto experts = tiny_experts();
  TrainInputs with = tiny_inputs(&experts);
  with.train.use_experts = false;
  const TrainInputs without = tiny_inputs(nullptr);
  const TrainOutput a = train_loop(with);
  const TrainOutput b = train_loop(without);
  EXPECT_TRUE(a.model == b.model);
  for (const MetricsRow& r : a.rows) EXPECT_EQ(r.gamma, 0.0);
}

TEST(TrainLoop, RejectsBadInputs) {
  TrainInputs in = tiny_inputs(nullptr);
  in.skills = nullptr;
  EXPECT_THROW(train_loop(in), ConfigError);
  TrainInputs small = tiny_inputs(nullptr);
  small.train.replay_capacity = 4;
  EXPECT_THROW(train_loop(small), ConfigError);
  const std::vector<IntentEncoder> wrong{IntentEncoder(obs::kDim, 5, 8, 1)};
  TrainInputs mismatch = tiny_inputs(&wrong);
  EXPECT_THROW(train_loop(mismatch), ConfigError);
}

}  // namespace
}  // namespace emts
