#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "json.hpp"

#include "emts/nn/checkpoint.hpp"
#include "emts/nn/gmm.hpp"
#include "emts/nn/mlp.hpp"

namespace emts {

using nn::Matrix;
using nn::Vector;

struct PolicyValue {
  nn::GmmPolicy policy;
  double value{0.0};
};

struct RewardState {
  double reward{0.0};
  Vector next;
};

/// The three functions a search needs from a learned model.
class SkillModel {
 public:
  virtual ~SkillModel() = default;
  virtual int latent_dim() const = 0;
  virtual Vector represent(std::span<const double> observation) const = 0;
  virtual RewardState dynamics(const Vector& state, std::span<const double> z) const = 0;
  virtual PolicyValue predict(const Vector& state) const = 0;
};

struct ModelConfig {
  int state_dim{64};
  int hidden{64};
  int components{3};
  double reward_scale{10.0};  // network reward output is multiplied by this
  double value_scale{100.0};  // likewise for the value output
  double min_std{1e-3};       // floor of the policy head's standard deviations

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Representation h, skill dynamics g and prediction f.
///
/// h: observation -> tanh state; g: [state | z] -> [reward | tanh next state];
/// f: state -> [mixture head | value]. Scalar heads are learned in units of
/// reward_scale and value_scale.
class ModelBundle final : public SkillModel {
 public:
  ModelBundle() = default;
  ModelBundle(int obs_dim, int latent_dim, const ModelConfig& cfg, std::uint64_t seed);
  ModelBundle(nn::Mlp h, nn::Mlp g, nn::Mlp f, int latent_dim, const ModelConfig& cfg);

  int latent_dim() const override { return latent_dim_; }
  int obs_dim() const { return h_.input_size(); }
  int state_dim() const { return cfg_.state_dim; }
  const ModelConfig& config() const { return cfg_; }
  nn::GmmHead policy_head() const { return {cfg_.components, latent_dim_, cfg_.min_std}; }

  Vector represent(std::span<const double> observation) const override;
  RewardState dynamics(const Vector& state, std::span<const double> z) const override;
  PolicyValue predict(const Vector& state) const override;

  nn::Mlp& h() { return h_; }
  nn::Mlp& g() { return g_; }
  nn::Mlp& f() { return f_; }
  const nn::Mlp& h() const { return h_; }
  const nn::Mlp& g() const { return g_; }
  const nn::Mlp& f() const { return f_; }

  /// Every parameter of h, g and f in a fixed order.
  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;
  ModelBundle zeros_like() const;
  void set_zero();
  bool operator==(const ModelBundle& other) const;

  nn::Checkpoint to_checkpoint(const nlohmann::json& extra_meta = nullptr) const;
  static ModelBundle from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  nn::Mlp h_;
  nn::Mlp g_;
  nn::Mlp f_;
  int latent_dim_{0};
  ModelConfig cfg_{};
};

}  // namespace emts
