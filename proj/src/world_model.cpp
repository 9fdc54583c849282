#include "emts/world_model.hpp"

#include <stdexcept>
#include <string>

#include "emts/errors.hpp"

namespace emts {

void ModelConfig::validate() const {
  if (state_dim < 1 || hidden < 1 || components < 1) throw ConfigError("model: state_dim, hidden, components must be >= 1");
  if (!(reward_scale > 0.0) || !(value_scale > 0.0)) throw ConfigError("model: reward_scale and value_scale must be > 0");
  if (!(min_std > 0.0)) throw ConfigError("model.min_std must be > 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"state_dim", c.state_dim},       {"hidden", c.hidden},           {"components", c.components},
       {"reward_scale", c.reward_scale}, {"value_scale", c.value_scale}, {"min_std", c.min_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.state_dim = j.value("state_dim", d.state_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.components = j.value("components", d.components);
  c.reward_scale = j.value("reward_scale", d.reward_scale);
  c.value_scale = j.value("value_scale", d.value_scale);
  c.min_std = j.value("min_std", d.min_std);
}

ModelBundle::ModelBundle(int obs_dim, int latent_dim, const ModelConfig& cfg, std::uint64_t seed)
    : latent_dim_(latent_dim), cfg_(cfg) {
  cfg_.validate();
  if (obs_dim < 1 || latent_dim < 1) throw std::invalid_argument("ModelBundle: bad sizes");
  std::mt19937_64 rng(seed);
  const int H = cfg.hidden;
  const int S = cfg.state_dim;
  h_ = nn::Mlp({obs_dim, H, H, S}, rng);
  // Zero output layers: the untrained model predicts zero reward and value and a
  // standard-normal mixture instead of arbitrary numbers at value_scale magnitude.
  g_ = nn::Mlp({S + latent_dim, H, H, 1 + S}, rng, nn::OutputInit::Zero);
  f_ = nn::Mlp({S, H, H, policy_head().size() + 1}, rng, nn::OutputInit::Zero);
}

ModelBundle::ModelBundle(nn::Mlp h, nn::Mlp g, nn::Mlp f, int latent_dim, const ModelConfig& cfg)
    : h_(std::move(h)), g_(std::move(g)), f_(std::move(f)), latent_dim_(latent_dim), cfg_(cfg) {
  cfg_.validate();
  const int S = cfg.state_dim;
  if (h_.output_size() != S || g_.input_size() != S + latent_dim || g_.output_size() != S + 1 ||
      f_.input_size() != S || f_.output_size() != policy_head().size() + 1) {
    throw std::invalid_argument("ModelBundle: network shapes do not match the configuration");
  }
}

Vector ModelBundle::represent(std::span<const double> observation) const {
  if (static_cast<int>(observation.size()) != obs_dim()) {
    throw std::invalid_argument("represent: observation has " + std::to_string(observation.size()) +
                                " features, model expects " + std::to_string(obs_dim()));
  }
  const Vector x = Eigen::Map<const Vector>(observation.data(), static_cast<Eigen::Index>(observation.size()));
  return h_.forward(x).array().tanh();
}

RewardState ModelBundle::dynamics(const Vector& state, std::span<const double> z) const {
  if (state.size() != cfg_.state_dim || static_cast<int>(z.size()) != latent_dim_)
    throw std::invalid_argument("dynamics: state or latent size mismatch");
  Vector x(cfg_.state_dim + latent_dim_);
  x.head(cfg_.state_dim) = state;
  x.tail(latent_dim_) = Eigen::Map<const Vector>(z.data(), latent_dim_);
  const Vector out = g_.forward(x);
  return {out(0) * cfg_.reward_scale, out.tail(cfg_.state_dim).array().tanh()};
}

PolicyValue ModelBundle::predict(const Vector& state) const {
  if (state.size() != cfg_.state_dim) throw std::invalid_argument("predict: state size mismatch");
  const Vector out = f_.forward(state);
  const nn::GmmHead head = policy_head();
  return {head.decode({out.data(), static_cast<std::size_t>(head.size())}), out(head.size()) * cfg_.value_scale};
}

std::vector<std::span<double>> ModelBundle::parameter_spans() {
  auto s = h_.parameter_spans();
  for (auto* net : {&g_, &f_}) {
    auto t = net->parameter_spans();
    s.insert(s.end(), t.begin(), t.end());
  }
  return s;
}

std::vector<std::span<const double>> ModelBundle::parameter_spans() const {
  auto s = h_.parameter_spans();
  for (const auto* net : {&g_, &f_}) {
    auto t = net->parameter_spans();
    s.insert(s.end(), t.begin(), t.end());
  }
  return s;
}

ModelBundle ModelBundle::zeros_like() const {
  return ModelBundle(h_.zeros_like(), g_.zeros_like(), f_.zeros_like(), latent_dim_, cfg_);
}

void ModelBundle::set_zero() {
  h_.set_zero();
  g_.set_zero();
  f_.set_zero();
}

bool ModelBundle::operator==(const ModelBundle& other) const {
  return latent_dim_ == other.latent_dim_ && h_ == other.h_ && g_ == other.g_ && f_ == other.f_;
}

nn::Checkpoint ModelBundle::to_checkpoint(const nlohmann::json& extra_meta) const {
  nlohmann::json meta{{"kind", "world_model"}, {"latent_dim", latent_dim_}, {"model", cfg_}};
  if (extra_meta.is_object()) meta.update(extra_meta);
  return {meta, {{"h", h_}, {"g", g_}, {"f", f_}}};
}

ModelBundle ModelBundle::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", std::string{}) != "world_model") throw ConfigError("checkpoint is not a world-model checkpoint");
  return ModelBundle(ckpt.net("h"), ckpt.net("g"), ckpt.net("f"), ckpt.meta.at("latent_dim").get<int>(),
                     ckpt.meta.at("model").get<ModelConfig>());
}

}  // namespace emts
