#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/driving_env.hpp"
#include "emts/expert_intents.hpp"
#include "emts/posterior.hpp"
#include "emts/replay.hpp"
#include "emts/skill_space.hpp"
#include "emts/tree_search.hpp"
#include "emts/world_model.hpp"

namespace emts {

struct TrainConfig {
  int unroll{5};           // J
  int td_steps{5};         // n of the value target, in skills
  int batch_size{64};
  int replay_capacity{10000};
  long env_step_budget{50000};
  int grad_steps_per_episode{20};
  double learning_rate{3e-4};
  double weight_decay{1e-4};
  long eval_interval{5000};  // environment steps between evaluations
  int eval_episodes{10};
  long checkpoint_interval{10000};
  int workers{1};
  bool use_experts{true};  // false runs the plain sampled search: no expert atoms, priors or targets
  double gamma_initial{0.5};
  double gamma_decay_fraction{0.5};  // gamma reaches 0 after this fraction of the budget
  std::uint64_t seed{1};

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear decay from gamma_initial to 0 over the first gamma_decay_fraction of the budget.
double gamma_at(const TrainConfig& cfg, long env_steps);

struct LossTerms {
  double loss_r{0.0};
  double loss_v{0.0};
  double loss_p{0.0};  // categorical cross-entropy including the log-normalizer
  /// The quantity the gradient belongs to: loss_r + loss_v + the policy term with
  /// the normalizer held constant.
  double objective{0.0};
  double total() const { return loss_r + loss_v + loss_p; }
};

/// Unrolls h then J steps of g along the stored executed atoms and scores rewards,
/// value targets and improved-policy targets. Averaged over the batch; gradients are
/// accumulated into `grads` (shape of `model`) when non-null.
LossTerms compute_loss(const ModelBundle& model, std::span<const ReplaySample> batch, const PosteriorConfig& pcfg,
                       const TrainConfig& tcfg, double discount, ModelBundle* grads = nullptr);

struct EpisodeMetrics {
  bool success{false};
  double completion{0.0};
  double total_return{0.0};
  int env_steps{0};
  int skills{0};
  TerminationCause cause{TerminationCause::None};
};

struct SelfPlayResult {
  Episode entries;
  EpisodeMetrics metrics;
  std::vector<StepTrace> trace;
};

/// Search, act, execute until the episode ends or `max_skills` decisions were made.
/// `env` must be freshly reset.
SelfPlayResult self_play_episode(DrivingEnv& env, const SkillModel& model, const std::vector<IntentEncoder>& experts,
                                 const SkillSpaceModel& skills, const SearchConfig& scfg, std::mt19937_64& rng,
                                 int max_skills = -1);

struct EvalSummary {
  double success_rate{0.0};
  double completion_ratio{0.0};
  double mean_return{0.0};
  std::vector<EpisodeMetrics> episodes;
};

/// Greedy (temperature 0) episodes on fixed seeds derived from `seed`. When `traces`
/// is non-null it receives one step trace per episode.
EvalSummary evaluate(const ScenarioConfig& scenario, const SkillModel& model, const std::vector<IntentEncoder>& experts,
                     const SkillSpaceModel& skills, SearchConfig scfg, int episodes, std::uint64_t seed,
                     std::vector<std::vector<StepTrace>>* traces = nullptr);

struct MetricsRow {
  long step{0};
  long episodes{0};
  double success_rate{0.0};
  double completion_ratio{0.0};
  double mean_return{0.0};
  double loss_r{0.0};
  double loss_v{0.0};
  double loss_p{0.0};
  double gamma{0.0};
  double lambda{0.0};
};

inline constexpr const char* kMetricsHeader =
    "step,episodes,success_rate,completion_ratio,mean_return,loss_r,loss_v,loss_p,gamma,lambda";
std::string format_metrics_row(const MetricsRow& row);

struct TrainInputs {
  ScenarioConfig scenario;
  SearchConfig search;
  PosteriorConfig posterior;
  TrainConfig train;
  ModelConfig model;
  const SkillSpaceModel* skills{nullptr};
  const std::vector<IntentEncoder>* experts{nullptr};
  /// When non-empty, metrics.csv and checkpoints are written here.
  std::filesystem::path out_dir;
  /// Optional starting weights; a fresh bundle seeded from train.seed otherwise.
  const ModelBundle* initial_model{nullptr};
};

struct TrainOutput {
  ModelBundle model;
  std::vector<MetricsRow> rows;
  long env_steps{0};
  long episodes{0};
  long grad_steps{0};
};

/// Self-play / optimization loop. Single-worker runs are bit-deterministic per seed;
/// multi-worker rounds run one episode per worker on a shared weight snapshot.
/// `on_row` is called after each evaluation. Throws DivergenceError on a non-finite loss.
TrainOutput train_loop(const TrainInputs& in, const std::function<void(const MetricsRow&)>& on_row = {});

}  // namespace emts
