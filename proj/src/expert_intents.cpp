#include "emts/expert_intents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include "emts/errors.hpp"
#include "emts/log.hpp"
#include "emts/nn/gmm.hpp"
#include "emts/nn/optim.hpp"

namespace emts {

using nlohmann::json;

void ExpertDataset::write_jsonl(const std::filesystem::path& path, const json& header) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  if (header.is_object()) out << json{{"emts_header", header}}.dump() << '\n';
  for (const ExpertEpisode& ep : episodes) {
    json actions = json::array();
    for (const Action& a : ep.actions) actions.push_back({a.throttle, a.steer});
    out << json{{"expert", expert_id}, {"style", style}, {"observations", ep.observations}, {"actions", actions},
                 {"cause", to_string(ep.cause)}}
               .dump()
        << '\n';
  }
}

ExpertDataset ExpertDataset::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("expert data file not found: " + path.string());
  ExpertDataset data;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("emts_header")) continue;
      data.expert_id = j.at("expert").get<int>();
      data.style = j.at("style").get<std::string>();
      ExpertEpisode ep;
      ep.observations = j.at("observations").get<std::vector<Observation>>();
      for (const auto& a : j.at("actions")) ep.actions.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
      ep.cause = termination_cause_from_string(j.value("cause", std::string("none")));
      if (ep.observations.size() != ep.actions.size())
        throw ConfigError("observation/action count mismatch");
      data.episodes.push_back(std::move(ep));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

ExpertDataset generate_expert_data(ExpertStyle style, int expert_id, const ExpertDataConfig& cfg, int workers) {
  if (cfg.episodes < 1) throw ConfigError("expert data: episodes must be >= 1");
  workers = std::max(1, workers);
  std::vector<std::optional<ExpertEpisode>> slots(static_cast<std::size_t>(cfg.episodes));

  auto run = [&](int worker) {
    for (int i = worker; i < cfg.episodes; i += workers) {
      DrivingEnv env(cfg.scenario);
      std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(i)};
      std::mt19937_64 rng(seq);
      Observation o = env.reset(rng);
      const ExpertContext ctx = ExpertContext::from_env(env);
      ExpertEpisode ep;
      std::normal_distribution<double> noise(0.0, cfg.action_noise);
      Action offset{};
      while (!env.done()) {
        const Action a = scripted_expert_act(style, o, ctx);
        ep.observations.push_back(o);
        ep.actions.push_back(a);
        if (cfg.action_noise > 0.0 && env.steps() % std::max(1, cfg.noise_hold) == 0)
          offset = {noise(rng), noise(rng)};
        o = env.step(clamp_action({a.throttle + offset.throttle, a.steer + offset.steer})).observation;
      }
      ep.cause = env.cause();
      if (static_cast<int>(ep.actions.size()) >= cfg.min_length) slots[static_cast<std::size_t>(i)] = std::move(ep);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }

  ExpertDataset data;
  data.expert_id = expert_id;
  data.style = to_string(style);
  for (auto& s : slots)
    if (s) data.episodes.push_back(std::move(*s));
  return data;
}

std::vector<SegmentPair> extract_segments(const ExpertDataset& data, int horizon, int stride) {
  if (horizon < 1 || stride < 1) throw ConfigError("extract_segments: horizon and stride must be >= 1");
  std::vector<SegmentPair> out;
  const auto T = static_cast<std::size_t>(horizon);
  for (const ExpertEpisode& ep : data.episodes) {
    for (std::size_t start = 0; start + T <= ep.actions.size(); start += static_cast<std::size_t>(stride)) {
      SegmentPair seg;
      seg.o1 = ep.observations[start];
      seg.tau.assign(ep.actions.begin() + static_cast<std::ptrdiff_t>(start),
                     ep.actions.begin() + static_cast<std::ptrdiff_t>(start + T));
      out.push_back(std::move(seg));
    }
  }
  if (out.empty()) throw ConfigError("extract_segments: no episode is long enough for horizon " + std::to_string(horizon));
  return out;
}

IntentEncoder::IntentEncoder(int obs_dim, int latent_dim, int hidden, std::uint64_t seed, int expert_id,
                             std::string style)
    : expert_id_(expert_id), style_(std::move(style)) {
  std::mt19937_64 rng(seed);
  net_ = nn::Mlp({obs_dim, hidden, hidden, 2 * latent_dim}, rng);
}

IntentEncoder::IntentEncoder(nn::Mlp net, int expert_id, std::string style, double min_std)
    : net_(std::move(net)), expert_id_(expert_id), style_(std::move(style)), min_std_(min_std) {
  if (net_.output_size() % 2 != 0) throw std::invalid_argument("IntentEncoder: output size must be even");
}

LatentDistribution IntentEncoder::distribution(std::span<const double> o) const {
  if (static_cast<int>(o.size()) != obs_dim()) throw std::invalid_argument("IntentEncoder: observation size mismatch");
  const Vector x = Eigen::Map<const Vector>(o.data(), static_cast<Eigen::Index>(o.size()));
  const Vector out = net_.forward(x);
  const int d = latent_dim();
  Vector std = out.tail(d).array().exp().max(min_std_);
  return {out.head(d), std};
}

double IntentEncoder::log_density(std::span<const double> o, std::span<const double> z) const {
  const LatentDistribution q = distribution(o);
  if (static_cast<int>(z.size()) != latent_dim()) throw std::invalid_argument("IntentEncoder: latent size mismatch");
  const auto n = static_cast<std::size_t>(q.mean.size());
  return nn::diag_gaussian_log_prob({q.mean.data(), n}, {q.std.data(), n}, z);
}

double IntentEncoder::density(std::span<const double> o, std::span<const double> z) const {
  return std::exp(log_density(o, z));
}

Vector IntentEncoder::sample(std::span<const double> o, std::mt19937_64& rng) const {
  const LatentDistribution q = distribution(o);
  return nn::diag_gaussian_sample(q.mean, q.std, rng);
}

nn::Checkpoint intents_to_checkpoint(const std::vector<IntentEncoder>& encoders, const json& extra_meta) {
  json experts = json::array();
  nn::Checkpoint ckpt;
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    experts.push_back({{"id", encoders[i].expert_id()}, {"style", encoders[i].style()}, {"min_std", encoders[i].min_std()}});
    ckpt.nets.push_back({"intent_" + std::to_string(i), encoders[i].net()});
  }
  ckpt.meta = {{"kind", "intents"}, {"experts", experts}};
  if (extra_meta.is_object()) ckpt.meta.update(extra_meta);
  return ckpt;
}

std::vector<IntentEncoder> intents_from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", std::string{}) != "intents") throw ConfigError("checkpoint is not an intents checkpoint");
  std::vector<IntentEncoder> out;
  const auto& experts = ckpt.meta.at("experts");
  for (std::size_t i = 0; i < experts.size(); ++i) {
    out.emplace_back(ckpt.net("intent_" + std::to_string(i)), experts[i].at("id").get<int>(),
                     experts[i].at("style").get<std::string>(), experts[i].value("min_std", nn::kMinStd));
  }
  return out;
}

void IntentTrainConfig::validate() const {
  if (hidden < 1 || batch_size < 1 || epochs < 0) throw ConfigError("intents: hidden/batch_size must be >= 1, epochs >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("intents.learning_rate must be > 0");
  if (!(nll_weight >= 0.0)) throw ConfigError("intents.nll_weight must be >= 0");
  if (stride < 1) throw ConfigError("intents.stride must be >= 1");
}

void to_json(json& j, const IntentTrainConfig& c) {
  j = {{"hidden", c.hidden},       {"epochs", c.epochs}, {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"nll_weight", c.nll_weight}, {"stride", c.stride},
       {"seed", c.seed}};
}

void from_json(const json& j, IntentTrainConfig& c) {
  const IntentTrainConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.nll_weight = j.value("nll_weight", d.nll_weight);
  c.stride = j.value("stride", d.stride);
  c.seed = j.value("seed", d.seed);
}

IntentLoss intent_loss(const IntentEncoder& enc, const SkillSpaceModel& skills,
                       std::span<const SegmentPair* const> batch, double nll_weight, nn::Mlp* grads) {
  if (batch.empty()) throw std::invalid_argument("intent_loss: empty batch");
  const int d = enc.latent_dim();
  const int T = skills.horizon();
  if (d != skills.latent_dim()) throw std::invalid_argument("intent_loss: latent size differs from the skill space");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index obs_dim = enc.obs_dim();

  Matrix x(obs_dim, B);
  Matrix target(2 * T, B);
  Matrix surrogate(d, B);
  Vector speed(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const SegmentPair& seg = *batch[static_cast<std::size_t>(b)];
    if (static_cast<Eigen::Index>(seg.o1.size()) != obs_dim) throw std::invalid_argument("intent_loss: observation size");
    x.col(b) = Eigen::Map<const Vector>(seg.o1.data(), obs_dim);
    target.col(b) = skills.flatten_actions(seg.tau);
    speed(b) = observed_speed(seg.o1);
    surrogate.col(b) = skills.encode(seg.tau, speed(b)).mean;
  }

  nn::MlpTape tape;
  const Matrix out = enc.net().forward(x, tape);
  const Matrix mean = out.topRows(d);
  const Matrix log_std = out.bottomRows(d);

  Matrix dec_in(d + 1, B);
  dec_in.topRows(d) = mean;
  dec_in.row(d) = (speed / skills.speed_scale()).transpose();
  nn::MlpTape dec_tape;
  const Matrix actions = skills.decoder().forward(dec_in, dec_tape).array().tanh();
  const Matrix diff = actions - target;
  const double n_elem = static_cast<double>(2 * T) * static_cast<double>(B);

  IntentLoss loss;
  loss.mse = diff.squaredNorm() / n_elem;

  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Matrix d_log_std = Matrix::Zero(d, B);
  double nll = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double ls = log_std(i, b);
      const bool floored = std::exp(ls) < enc.min_std();
      const double sd = floored ? enc.min_std() : std::exp(ls);
      const double r = (surrogate(i, b) - mean(i, b)) / sd;
      nll += std::log(sd) + 0.5 * r * r + half_log_2pi;
      if (!floored) d_log_std(i, b) = nll_weight * (1.0 - r * r) / static_cast<double>(B);
    }
  }
  loss.nll = nll / static_cast<double>(B);
  loss.total = loss.mse + nll_weight * loss.nll;

  if (grads != nullptr) {
    const Matrix d_act = (2.0 / n_elem) * diff.array() * (1.0 - actions.array().square());
    // The decoder only routes the gradient back to its input; its parameters stay untouched.
    const Matrix d_dec_in = skills.decoder().backward(dec_tape, d_act, nullptr);
    Matrix d_out = Matrix::Zero(2 * d, B);
    d_out.topRows(d) = d_dec_in.topRows(d);
    enc.net().backward(tape, d_out, grads);
    // The log-std rows learn from the output layer only. Letting the likelihood reach the
    // shared hidden layers drowns the much smaller reconstruction gradient.
    nn::DenseLayer& last = grads->layers().back();
    last.weight.bottomRows(d) += d_log_std * tape.inputs.back().transpose();
    last.bias.tail(d) += d_log_std.rowwise().sum();
  }
  return loss;
}

IntentTrainResult train_intent_encoder(const std::vector<SegmentPair>& segments, const SkillSpaceModel& skills,
                                       const IntentTrainConfig& cfg, int expert_id, const std::string& style) {
  cfg.validate();
  if (segments.empty()) throw ConfigError("train_intent_encoder: no segments");
  const int obs_dim = static_cast<int>(segments.front().o1.size());
  std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(expert_id));

  IntentTrainResult result;
  result.encoder = IntentEncoder(obs_dim, skills.latent_dim(), cfg.hidden, cfg.seed + 1000u * static_cast<std::uint64_t>(expert_id + 1),
                                 expert_id, style);
  nn::Mlp grads = result.encoder.net().zeros_like();
  nn::Adam adam({.learning_rate = cfg.learning_rate});

  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<const SegmentPair*> mb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Cosine anneal down to 5% of the base rate; a constant rate stalls on minibatch noise.
    const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    adam.set_learning_rate(cfg.learning_rate * (0.05 + 0.475 * (1.0 + std::cos(std::numbers::pi * progress))));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(start + batch, order.size()); ++i) mb.push_back(&segments[order[i]]);
      grads.set_zero();
      const IntentLoss l = intent_loss(result.encoder, skills, mb, cfg.nll_weight, &grads);
      if (!std::isfinite(l.total)) {
        throw DivergenceError("intent training diverged for expert " + std::to_string(expert_id) + " at epoch " +
                              std::to_string(epoch));
      }
      adam.step(result.encoder.net().parameter_spans(), std::as_const(grads).parameter_spans());
      result.step_losses.push_back(l.total);
    }
    if ((epoch + 1) % 25 == 0)
      log::info("intents[{}]: epoch {} loss {:.6f}", expert_id, epoch + 1, result.step_losses.back());
  }
  result.final_mse = intent_mse(result.encoder, skills, segments);
  return result;
}

double intent_mse(const IntentEncoder& enc, const SkillSpaceModel& skills, const std::vector<SegmentPair>& segments) {
  if (segments.empty()) return 0.0;
  double total = 0.0;
  for (const SegmentPair& seg : segments) {
    const LatentDistribution q = enc.distribution(seg.o1);
    const auto decoded = skills.decode_actions({q.mean.data(), static_cast<std::size_t>(q.mean.size())},
                                               observed_speed(seg.o1));
    for (std::size_t t = 0; t < decoded.size(); ++t) {
      const double a = decoded[t].throttle - seg.tau[t].throttle;
      const double b = decoded[t].steer - seg.tau[t].steer;
      total += a * a + b * b;
    }
  }
  return total / (2.0 * skills.horizon() * static_cast<double>(segments.size()));
}

}  // namespace emts
