#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/driving_env.hpp"
#include "emts/expert_intents.hpp"
#include "emts/kinematics.hpp"
#include "emts/posterior.hpp"
#include "emts/primitive_library.hpp"
#include "emts/skill_space.hpp"
#include "emts/trainer.hpp"
#include "emts/tree_search.hpp"
#include "emts/world_model.hpp"

namespace emts {

void to_json(nlohmann::json& j, const KinematicsConfig& c);
void from_json(const nlohmann::json& j, KinematicsConfig& c);

struct ExpertsSection {
  std::vector<std::string> styles{"cautious", "assertive", "lane_keeper"};
  int episodes{40};
  double action_noise{0.1};
  int noise_hold{5};
  std::uint64_t seed{21};
};

/// Every stage's settings in one document.
struct RunConfig {
  int horizon{10};     // T, shared by the library, the skill space and the intent data
  int latent_dim{8};   // d_z, shared by the skill space, intents and the world model
  int observation_dim{obs::kDim};
  KinematicsConfig kinematics{};
  LibraryConfig library{};
  SkillTrainConfig skills{};
  ScenarioConfig scenario{};
  ExpertsSection experts{};
  IntentTrainConfig intents{};
  ModelConfig model{};
  SearchConfig search{};
  PosteriorConfig posterior{};
  TrainConfig train{};

  /// Per-section and cross-section checks; throws ConfigError naming the broken invariant.
  void validate() const;
  std::vector<ExpertStyle> expert_styles() const;
  ExpertDataConfig expert_data_config() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Parses and validates. Throws ConfigError for missing files, bad JSON or invariant violations.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace emts
