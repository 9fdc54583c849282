#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "emts/kinematics.hpp"
#include "emts/nn/checkpoint.hpp"
#include "emts/nn/mlp.hpp"
#include "emts/primitive_library.hpp"

namespace emts {

using nn::Matrix;
using nn::Vector;

struct LatentDistribution {
  Vector mean;
  Vector std;
};

/// Motion encoder q_m(z | tau) and skill decoder q_d(tau | z).
///
/// The encoder reads the flattened action sequence plus the normalized initial
/// speed and emits [mean | log-std]. The decoder reads [z | normalized initial
/// speed] and emits 2T raw values squashed by tanh into T actions. States are
/// never predicted: `decode` rolls the decoded actions out through the
/// kinematic model.
class SkillSpaceModel {
 public:
  SkillSpaceModel() = default;
  SkillSpaceModel(int horizon, int latent_dim, int hidden, std::uint64_t seed, double speed_scale = 20.0);
  SkillSpaceModel(nn::Mlp encoder, nn::Mlp decoder, int horizon, int latent_dim, double speed_scale);

  int horizon() const { return horizon_; }
  int latent_dim() const { return latent_dim_; }
  double speed_scale() const { return speed_scale_; }
  const nn::Mlp& encoder() const { return encoder_; }
  const nn::Mlp& decoder() const { return decoder_; }
  nn::Mlp& encoder() { return encoder_; }
  nn::Mlp& decoder() { return decoder_; }

  /// Throws std::invalid_argument when the trajectory horizon differs from the model's.
  LatentDistribution encode(const Trajectory& traj) const;
  LatentDistribution encode(std::span<const Action> actions, double initial_speed) const;

  std::vector<Action> decode_actions(std::span<const double> z, double initial_speed) const;

  /// Both output modes: decoded actions and their rollout from `initial`.
  Trajectory decode(std::span<const double> z, const VehicleState& initial, const KinematicsConfig& kin) const;

  /// Column layouts used by the batched training code.
  Vector encoder_input(std::span<const Action> actions, double initial_speed) const;
  Vector decoder_input(std::span<const double> z, double initial_speed) const;
  Vector flatten_actions(std::span<const Action> actions) const;

  nn::Checkpoint to_checkpoint(const nlohmann::json& extra_meta = nullptr) const;
  static SkillSpaceModel from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  int horizon_{10};
  int latent_dim_{8};
  double speed_scale_{20.0};
};

/// Gradients with the shape of a SkillSpaceModel's two networks.
struct SkillSpaceGrads {
  nn::Mlp encoder;
  nn::Mlp decoder;
};

/// 1/2 sum(sigma^2 + mu^2 - 1 - 2 log sigma): KL(N(mu, sigma^2) || N(0, I)).
double gaussian_kl_to_standard(const Vector& mean, const Vector& std);

struct ElboTerms {
  double loss{0.0};            // recon + zeta * kl
  double reconstruction{0.0};  // per-element action MSE
  double kl{0.0};              // batch-mean KL
};

/// Negative ELBO over a batch with reparameterized sampling z = mean + std * eps.
/// When `grads` is non-null, gradients are accumulated into it.
ElboTerms elbo_loss(const SkillSpaceModel& model, std::span<const Trajectory* const> batch, double zeta,
                    std::mt19937_64& rng, SkillSpaceGrads* grads = nullptr);

struct SkillTrainConfig {
  int latent_dim{8};
  int hidden{128};
  double zeta{1e-3};
  double zeta_warmup_fraction{0.2};
  int epochs{150};
  int batch_size{64};
  double learning_rate{1e-3};
  double holdout_fraction{0.1};
  std::uint64_t seed{11};

  void validate() const;
};

void to_json(nlohmann::json& j, const SkillTrainConfig& c);
void from_json(const nlohmann::json& j, SkillTrainConfig& c);

struct SkillTrainResult {
  SkillSpaceModel model;
  std::vector<double> step_losses;   // loss at every optimizer step
  std::vector<double> epoch_losses;  // mean loss per epoch
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> holdout_indices;
  double holdout_mse{0.0};
};

/// Minibatch optimization of the ELBO; deterministic for a fixed seed.
/// Throws DivergenceError if the loss becomes non-finite.
SkillTrainResult train_skill_space(const TrajectoryLibrary& library, const SkillTrainConfig& cfg,
                                   double speed_scale = 20.0);

/// Mean per-element squared error between each trajectory's actions and the
/// decoding of its posterior mean.
double reconstruction_mse(const SkillSpaceModel& model, std::span<const Trajectory* const> trajectories);

}  // namespace emts
