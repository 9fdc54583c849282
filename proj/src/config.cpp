#include "emts/config.hpp"

#include <fstream>

#include "emts/errors.hpp"

namespace emts {

using nlohmann::json;

void to_json(json& j, const KinematicsConfig& c) {
  j = {{"dt", c.dt},
       {"wheelbase", c.wheelbase},
       {"max_accel", c.max_accel},
       {"max_steer_angle", c.max_steer_angle},
       {"v_max", c.v_max}};
}

void from_json(const json& j, KinematicsConfig& c) {
  const KinematicsConfig d;
  c.dt = j.value("dt", d.dt);
  c.wheelbase = j.value("wheelbase", d.wheelbase);
  c.max_accel = j.value("max_accel", d.max_accel);
  c.max_steer_angle = j.value("max_steer_angle", d.max_steer_angle);
  c.v_max = j.value("v_max", d.v_max);
}

void RunConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon (T) must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim (d_z) must be >= 1");
  if (observation_dim != obs::kDim) {
    throw ConfigError("observation_dim is " + std::to_string(observation_dim) + " but the environment produces " +
                      std::to_string(obs::kDim));
  }
  if (library.horizon != horizon) throw ConfigError("library.horizon must equal horizon (T)");
  if (skills.latent_dim != latent_dim) throw ConfigError("skills.latent_dim must equal latent_dim (d_z)");
  try {
    kinematics.validate();
    library.validate();
    scenario.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  skills.validate();
  intents.validate();
  model.validate();
  search.validate();
  posterior.validate();
  train.validate();
  if (experts.episodes < 1) throw ConfigError("experts.episodes must be >= 1");
  if (!(experts.action_noise >= 0.0) || experts.noise_hold < 1)
    throw ConfigError("experts.action_noise must be >= 0 and experts.noise_hold >= 1");
  const auto styles = expert_styles();
  if (!posterior.expert_weights.empty() && posterior.expert_weights.size() != styles.size())
    throw ConfigError("posterior.expert_weights needs one weight per expert style");
}

std::vector<ExpertStyle> RunConfig::expert_styles() const {
  std::vector<ExpertStyle> out;
  for (const std::string& s : experts.styles) {
    try {
      out.push_back(expert_style_from_string(s));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("experts.styles: ") + e.what());
    }
  }
  return out;
}

ExpertDataConfig RunConfig::expert_data_config() const {
  ExpertDataConfig c;
  c.scenario = scenario;
  c.episodes = experts.episodes;
  c.min_length = horizon;
  c.action_noise = experts.action_noise;
  c.noise_hold = experts.noise_hold;
  c.seed = experts.seed;
  return c;
}

void to_json(json& j, const RunConfig& c) {
  j = {{"horizon", c.horizon},
       {"latent_dim", c.latent_dim},
       {"observation_dim", c.observation_dim},
       {"kinematics", c.kinematics},
       {"library", c.library},
       {"skills", c.skills},
       {"scenario", c.scenario},
       {"experts",
        {{"styles", c.experts.styles},
         {"episodes", c.experts.episodes},
         {"action_noise", c.experts.action_noise},
         {"noise_hold", c.experts.noise_hold},
         {"seed", c.experts.seed}}},
       {"intents", c.intents},
       {"model", c.model},
       {"search", c.search},
       {"posterior", c.posterior},
       {"train", c.train}};
}

void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  c.horizon = j.value("horizon", c.horizon);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.observation_dim = j.value("observation_dim", c.observation_dim);
  // Sections default to the shared T and d_z unless they say otherwise.
  c.library.horizon = c.horizon;
  c.skills.latent_dim = c.latent_dim;
  if (j.contains("kinematics")) c.kinematics = j.at("kinematics").get<KinematicsConfig>();
  if (j.contains("library")) {
    json lib = j.at("library");
    if (!lib.contains("horizon")) lib["horizon"] = c.horizon;
    c.library = lib.get<LibraryConfig>();
  }
  if (j.contains("skills")) {
    json sk = j.at("skills");
    if (!sk.contains("latent_dim")) sk["latent_dim"] = c.latent_dim;
    c.skills = sk.get<SkillTrainConfig>();
  }
  if (j.contains("scenario")) c.scenario = j.at("scenario").get<ScenarioConfig>();
  if (j.contains("experts")) {
    const json& e = j.at("experts");
    c.experts.styles = e.value("styles", c.experts.styles);
    c.experts.episodes = e.value("episodes", c.experts.episodes);
    c.experts.action_noise = e.value("action_noise", c.experts.action_noise);
    c.experts.noise_hold = e.value("noise_hold", c.experts.noise_hold);
    c.experts.seed = e.value("seed", c.experts.seed);
  }
  if (j.contains("intents")) c.intents = j.at("intents").get<IntentTrainConfig>();
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("search")) c.search = j.at("search").get<SearchConfig>();
  if (j.contains("posterior")) c.posterior = j.at("posterior").get<PosteriorConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config: " + path.string());
  out << json(c).dump(2) << '\n';
}

}  // namespace emts
