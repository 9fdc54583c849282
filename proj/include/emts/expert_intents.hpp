#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/driving_env.hpp"
#include "emts/nn/checkpoint.hpp"
#include "emts/nn/gmm.hpp"
#include "emts/nn/mlp.hpp"
#include "emts/scripted_expert.hpp"
#include "emts/skill_space.hpp"

namespace emts {

struct ExpertEpisode {
  std::vector<Observation> observations;
  std::vector<Action> actions;  // actions[i] was taken after observations[i]
  TerminationCause cause{TerminationCause::None};
};

struct ExpertDataset {
  int expert_id{0};
  std::string style;
  std::vector<ExpertEpisode> episodes;

  /// One JSON object per episode; an optional header object comes first.
  void write_jsonl(const std::filesystem::path& path, const nlohmann::json& header = nullptr) const;
  /// Throws ConfigError when the file is missing or malformed.
  static ExpertDataset read_jsonl(const std::filesystem::path& path);
};

struct ExpertDataConfig {
  ScenarioConfig scenario{};
  int episodes{40};
  int min_length{10};  // shorter episodes are discarded
  /// Std of the perturbation added to executed actions (labels stay clean), so the
  /// data also covers recovering from drift. Redrawn every `noise_hold` steps.
  double action_noise{0.1};
  int noise_hold{5};
  std::uint64_t seed{21};
};

/// Rolls the scripted driver through freshly reset environments. Episode i resets
/// with a generator seeded from (seed, i), so the result does not depend on scheduling.
/// Recorded actions are the driver's own; the executed ones carry the configured noise.
ExpertDataset generate_expert_data(ExpertStyle style, int expert_id, const ExpertDataConfig& cfg,
                                   int workers = 1);

struct SegmentPair {
  Observation o1;
  std::vector<Action> tau;
};

/// Sliding windows of `horizon` actions every `stride` steps; windows crossing an
/// episode end are dropped. Throws ConfigError when nothing fits.
std::vector<SegmentPair> extract_segments(const ExpertDataset& data, int horizon, int stride);

/// Per-expert map from an observation to a diagonal Gaussian over latents.
class IntentEncoder {
 public:
  IntentEncoder() = default;
  IntentEncoder(int obs_dim, int latent_dim, int hidden, std::uint64_t seed, int expert_id = 0,
                std::string style = {});
  IntentEncoder(nn::Mlp net, int expert_id, std::string style, double min_std = nn::kMinStd);

  int expert_id() const { return expert_id_; }
  const std::string& style() const { return style_; }
  int latent_dim() const { return net_.output_size() / 2; }
  int obs_dim() const { return net_.input_size(); }
  double min_std() const { return min_std_; }
  void set_min_std(double s) { min_std_ = s; }
  const nn::Mlp& net() const { return net_; }
  nn::Mlp& net() { return net_; }

  LatentDistribution distribution(std::span<const double> o) const;
  double log_density(std::span<const double> o, std::span<const double> z) const;
  double density(std::span<const double> o, std::span<const double> z) const;
  Vector sample(std::span<const double> o, std::mt19937_64& rng) const;

 private:
  nn::Mlp net_;
  int expert_id_{0};
  std::string style_;
  double min_std_{nn::kMinStd};
};

nn::Checkpoint intents_to_checkpoint(const std::vector<IntentEncoder>& encoders,
                                     const nlohmann::json& extra_meta = nullptr);
std::vector<IntentEncoder> intents_from_checkpoint(const nn::Checkpoint& ckpt);

struct IntentTrainConfig {
  int hidden{64};
  int epochs{150};
  int batch_size{64};
  double learning_rate{1e-3};
  double nll_weight{0.05};  // weight of the log-std likelihood term
  int stride{5};
  std::uint64_t seed{31};

  void validate() const;
};

void to_json(nlohmann::json& j, const IntentTrainConfig& c);
void from_json(const nlohmann::json& j, IntentTrainConfig& c);

struct IntentLoss {
  double total{0.0};
  double mse{0.0};  // decoded-action MSE of the mean latent
  double nll{0.0};  // Gaussian NLL of the surrogate latent under the predicted spread
};

/// Loss over a batch. The mean is scored through the decoder, which only passes
/// gradients back to its input. The log-std head is fitted to the skill encoder's
/// posterior mean of tau, treated as an observed latent, with the predicted mean stopped.
/// Gradients for the encoder net are accumulated into `grads` when non-null.
IntentLoss intent_loss(const IntentEncoder& enc, const SkillSpaceModel& skills,
                       std::span<const SegmentPair* const> batch, double nll_weight, nn::Mlp* grads = nullptr);

struct IntentTrainResult {
  IntentEncoder encoder;
  std::vector<double> step_losses;
  double final_mse{0.0};
};

/// Throws DivergenceError on a non-finite loss. `skills` is never modified.
IntentTrainResult train_intent_encoder(const std::vector<SegmentPair>& segments, const SkillSpaceModel& skills,
                                       const IntentTrainConfig& cfg, int expert_id = 0,
                                       const std::string& style = {});

/// Mean decoded-action MSE of the encoder's mean latent against each segment's actions.
double intent_mse(const IntentEncoder& enc, const SkillSpaceModel& skills, const std::vector<SegmentPair>& segments);

}  // namespace emts
