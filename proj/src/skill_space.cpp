#include "emts/skill_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "emts/errors.hpp"
#include "emts/log.hpp"
#include "emts/nn/optim.hpp"

namespace emts {

SkillSpaceModel::SkillSpaceModel(int horizon, int latent_dim, int hidden, std::uint64_t seed, double speed_scale)
    : horizon_(horizon), latent_dim_(latent_dim), speed_scale_(speed_scale) {
  if (horizon < 1 || latent_dim < 1 || hidden < 1) throw std::invalid_argument("SkillSpaceModel: bad sizes");
  std::mt19937_64 rng(seed);
  encoder_ = nn::Mlp({2 * horizon + 1, hidden, hidden, 2 * latent_dim}, rng, nn::OutputInit::Zero);
  decoder_ = nn::Mlp({latent_dim + 1, hidden, hidden, 2 * horizon}, rng);
}

SkillSpaceModel::SkillSpaceModel(nn::Mlp encoder, nn::Mlp decoder, int horizon, int latent_dim, double speed_scale)
    : encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      horizon_(horizon),
      latent_dim_(latent_dim),
      speed_scale_(speed_scale) {
  if (encoder_.input_size() != 2 * horizon + 1 || encoder_.output_size() != 2 * latent_dim ||
      decoder_.input_size() != latent_dim + 1 || decoder_.output_size() != 2 * horizon) {
    throw std::invalid_argument("SkillSpaceModel: network shapes do not match horizon/latent_dim");
  }
}

Vector SkillSpaceModel::flatten_actions(std::span<const Action> actions) const {
  if (static_cast<int>(actions.size()) != horizon_) {
    throw std::invalid_argument("SkillSpaceModel: trajectory horizon " + std::to_string(actions.size()) +
                                " does not match model horizon " + std::to_string(horizon_));
  }
  Vector out(2 * horizon_);
  for (int t = 0; t < horizon_; ++t) {
    out(2 * t) = actions[static_cast<std::size_t>(t)].throttle;
    out(2 * t + 1) = actions[static_cast<std::size_t>(t)].steer;
  }
  return out;
}

Vector SkillSpaceModel::encoder_input(std::span<const Action> actions, double initial_speed) const {
  Vector x(2 * horizon_ + 1);
  x.head(2 * horizon_) = flatten_actions(actions);
  x(2 * horizon_) = initial_speed / speed_scale_;
  return x;
}

Vector SkillSpaceModel::decoder_input(std::span<const double> z, double initial_speed) const {
  if (static_cast<int>(z.size()) != latent_dim_) throw std::invalid_argument("SkillSpaceModel: latent size mismatch");
  Vector x(latent_dim_ + 1);
  for (int i = 0; i < latent_dim_; ++i) x(i) = z[static_cast<std::size_t>(i)];
  x(latent_dim_) = initial_speed / speed_scale_;
  return x;
}

LatentDistribution SkillSpaceModel::encode(std::span<const Action> actions, double initial_speed) const {
  const Vector out = encoder_.forward(encoder_input(actions, initial_speed));
  return {out.head(latent_dim_), out.tail(latent_dim_).array().exp()};
}

LatentDistribution SkillSpaceModel::encode(const Trajectory& traj) const {
  return encode(traj.actions, traj.initial.v);
}

std::vector<Action> SkillSpaceModel::decode_actions(std::span<const double> z, double initial_speed) const {
  const Vector out = decoder_.forward(decoder_input(z, initial_speed));
  std::vector<Action> actions(static_cast<std::size_t>(horizon_));
  for (int t = 0; t < horizon_; ++t) {
    actions[static_cast<std::size_t>(t)] = {std::tanh(out(2 * t)), std::tanh(out(2 * t + 1))};
  }
  return actions;
}

Trajectory SkillSpaceModel::decode(std::span<const double> z, const VehicleState& initial,
                                   const KinematicsConfig& kin) const {
  return make_trajectory(initial, decode_actions(z, initial.v), kin);
}

nn::Checkpoint SkillSpaceModel::to_checkpoint(const nlohmann::json& extra_meta) const {
  nlohmann::json meta{{"kind", "skill_space"},
                      {"horizon", horizon_},
                      {"latent_dim", latent_dim_},
                      {"speed_scale", speed_scale_}};
  if (extra_meta.is_object()) meta.update(extra_meta);
  return {meta, {{"encoder", encoder_}, {"decoder", decoder_}}};
}

SkillSpaceModel SkillSpaceModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", std::string{}) != "skill_space") {
    throw ConfigError("checkpoint is not a skill-space checkpoint");
  }
  return SkillSpaceModel(ckpt.net("encoder"), ckpt.net("decoder"), ckpt.meta.at("horizon").get<int>(),
                         ckpt.meta.at("latent_dim").get<int>(), ckpt.meta.at("speed_scale").get<double>());
}

double gaussian_kl_to_standard(const Vector& mean, const Vector& std) {
  return 0.5 * (std.array().square() + mean.array().square() - 1.0 - 2.0 * std.array().log()).sum();
}

ElboTerms elbo_loss(const SkillSpaceModel& model, std::span<const Trajectory* const> batch, double zeta,
                    std::mt19937_64& rng, SkillSpaceGrads* grads) {
  if (batch.empty()) throw std::invalid_argument("elbo_loss: empty batch");
  const int T = model.horizon();
  const int d = model.latent_dim();
  const auto B = static_cast<Eigen::Index>(batch.size());

  Matrix enc_in(2 * T + 1, B);
  Matrix target(2 * T, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Trajectory& tr = *batch[static_cast<std::size_t>(b)];
    enc_in.col(b) = model.encoder_input(tr.actions, tr.initial.v);
    target.col(b) = model.flatten_actions(tr.actions);
  }

  nn::MlpTape enc_tape;
  const Matrix enc_out = model.encoder().forward(enc_in, enc_tape);
  const Matrix mean = enc_out.topRows(d);
  const Matrix log_std = enc_out.bottomRows(d);
  const Matrix std = log_std.array().exp();

  Matrix eps(d, B);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < d; ++i) eps(i, b) = normal(rng);
  }
  Matrix dec_in(d + 1, B);
  dec_in.topRows(d) = mean + std.cwiseProduct(eps);
  dec_in.row(d) = enc_in.row(2 * T);

  nn::MlpTape dec_tape;
  const Matrix dec_out = model.decoder().forward(dec_in, dec_tape);
  const Matrix actions = dec_out.array().tanh();
  const Matrix diff = actions - target;

  const double n_elem = static_cast<double>(2 * T) * static_cast<double>(B);
  ElboTerms terms;
  terms.reconstruction = diff.squaredNorm() / n_elem;
  terms.kl = 0.5 * (std.array().square() + mean.array().square() - 1.0 - 2.0 * log_std.array()).sum() /
             static_cast<double>(B);
  terms.loss = terms.reconstruction + zeta * terms.kl;

  if (grads != nullptr) {
    Matrix d_out = (2.0 / n_elem) * diff.array() * (1.0 - actions.array().square());
    const Matrix d_dec_in = model.decoder().backward(dec_tape, d_out, &grads->decoder);
    const Matrix d_z = d_dec_in.topRows(d);
    Matrix d_enc(2 * d, B);
    d_enc.topRows(d) = d_z + (zeta / static_cast<double>(B)) * mean;
    d_enc.bottomRows(d) = d_z.cwiseProduct(std).cwiseProduct(eps) +
                          (zeta / static_cast<double>(B)) * Matrix(std.array().square() - 1.0);
    model.encoder().backward(enc_tape, d_enc, &grads->encoder);
  }
  return terms;
}

void SkillTrainConfig::validate() const {
  if (!(zeta >= 0.0)) throw ConfigError("skills.zeta must be >= 0");
  if (latent_dim < 1 || hidden < 1) throw ConfigError("skills.latent_dim and skills.hidden must be >= 1");
  if (epochs < 0 || batch_size < 1) throw ConfigError("skills.epochs must be >= 0 and batch_size >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("skills.learning_rate must be > 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("skills.holdout_fraction must be in [0,1)");
}

void to_json(nlohmann::json& j, const SkillTrainConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim},
                     {"hidden", c.hidden},
                     {"zeta", c.zeta},
                     {"zeta_warmup_fraction", c.zeta_warmup_fraction},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"holdout_fraction", c.holdout_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SkillTrainConfig& c) {
  SkillTrainConfig d;
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.zeta = j.value("zeta", d.zeta);
  c.zeta_warmup_fraction = j.value("zeta_warmup_fraction", d.zeta_warmup_fraction);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.seed = j.value("seed", d.seed);
}

double reconstruction_mse(const SkillSpaceModel& model, std::span<const Trajectory* const> trajectories) {
  if (trajectories.empty()) return 0.0;
  double total = 0.0;
  for (const Trajectory* tr : trajectories) {
    const LatentDistribution q = model.encode(*tr);
    const auto decoded = model.decode_actions({q.mean.data(), static_cast<std::size_t>(q.mean.size())}, tr->initial.v);
    for (std::size_t t = 0; t < decoded.size(); ++t) {
      const double dt = decoded[t].throttle - tr->actions[t].throttle;
      const double ds = decoded[t].steer - tr->actions[t].steer;
      total += dt * dt + ds * ds;
    }
  }
  return total / (2.0 * model.horizon() * static_cast<double>(trajectories.size()));
}

namespace {

std::vector<std::span<double>> concat_spans(nn::Mlp& a, nn::Mlp& b) {
  auto s = a.parameter_spans();
  auto t = b.parameter_spans();
  s.insert(s.end(), t.begin(), t.end());
  return s;
}

std::vector<std::span<const double>> concat_spans(const nn::Mlp& a, const nn::Mlp& b) {
  auto s = a.parameter_spans();
  auto t = b.parameter_spans();
  s.insert(s.end(), t.begin(), t.end());
  return s;
}

}  // namespace

SkillTrainResult train_skill_space(const TrajectoryLibrary& library, const SkillTrainConfig& cfg, double speed_scale) {
  cfg.validate();
  if (library.size() == 0) throw ConfigError("train_skill_space: empty library");
  std::mt19937_64 rng(cfg.seed);

  SkillTrainResult result;
  result.model = SkillSpaceModel(library.horizon(), cfg.latent_dim, cfg.hidden, cfg.seed, speed_scale);

  std::vector<std::size_t> order(library.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t holdout = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(library.size()));
  if (holdout >= library.size()) holdout = library.size() - 1;
  result.holdout_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
  result.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());

  const std::size_t n_train = result.train_indices.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n_train + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  const double warmup_steps = std::max(1.0, cfg.zeta_warmup_fraction * total_steps);

  nn::Adam adam({.learning_rate = cfg.learning_rate});
  SkillSpaceGrads grads{result.model.encoder().zeros_like(), result.model.decoder().zeros_like()};
  std::vector<const Trajectory*> mb;
  std::vector<std::size_t> epoch_order = result.train_indices;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(epoch_order.begin(), epoch_order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(start + batch, n_train); ++i) mb.push_back(&library[epoch_order[i]]);
      const double zeta = cfg.zeta * std::min(1.0, static_cast<double>(step) / warmup_steps);
      grads.encoder.set_zero();
      grads.decoder.set_zero();
      const ElboTerms terms = elbo_loss(result.model, mb, zeta, rng, &grads);
      if (!std::isfinite(terms.loss)) {
        throw DivergenceError("skill-space training diverged at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step) + " (recon " + std::to_string(terms.reconstruction) + ", kl " +
                              std::to_string(terms.kl) + ")");
      }
      adam.step(concat_spans(result.model.encoder(), result.model.decoder()),
                concat_spans(std::as_const(grads.encoder), std::as_const(grads.decoder)));
      result.step_losses.push_back(terms.loss);
      epoch_sum += terms.loss;
      ++step;
    }
    result.epoch_losses.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    if ((epoch + 1) % 25 == 0) log::info("skills: epoch {} loss {:.5f}", epoch + 1, result.epoch_losses.back());
  }

  std::vector<const Trajectory*> held;
  for (std::size_t i : result.holdout_indices) held.push_back(&library[i]);
  result.holdout_mse = reconstruction_mse(result.model, held);
  return result;
}

}  // namespace emts
