#include "emts/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "emts/errors.hpp"
#include "emts/log.hpp"
#include "emts/nn/optim.hpp"

namespace emts {

using nlohmann::json;

void TrainConfig::validate() const {
  if (unroll < 1) throw ConfigError("train.unroll (J) must be >= 1");
  if (td_steps < 0) throw ConfigError("train.td_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (replay_capacity < batch_size) throw ConfigError("train.replay_capacity must be >= train.batch_size");
  if (env_step_budget < 0 || grad_steps_per_episode < 0) throw ConfigError("train budgets must be >= 0");
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("train.learning_rate > 0 and weight_decay >= 0 required");
  if (eval_interval < 1 || eval_episodes < 1) throw ConfigError("train.eval_interval and eval_episodes must be >= 1");
  if (checkpoint_interval < 1) throw ConfigError("train.checkpoint_interval must be >= 1");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
  if (!(gamma_initial >= 0.0 && gamma_initial <= 1.0)) throw ConfigError("train.gamma_initial must be in [0,1]");
  if (!(gamma_decay_fraction > 0.0)) throw ConfigError("train.gamma_decay_fraction must be > 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"unroll", c.unroll},
       {"td_steps", c.td_steps},
       {"batch_size", c.batch_size},
       {"replay_capacity", c.replay_capacity},
       {"env_step_budget", c.env_step_budget},
       {"grad_steps_per_episode", c.grad_steps_per_episode},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"eval_interval", c.eval_interval},
       {"eval_episodes", c.eval_episodes},
       {"checkpoint_interval", c.checkpoint_interval},
       {"workers", c.workers},
       {"use_experts", c.use_experts},
       {"gamma_initial", c.gamma_initial},
       {"gamma_decay_fraction", c.gamma_decay_fraction},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.unroll = j.value("unroll", d.unroll);
  c.td_steps = j.value("td_steps", d.td_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.replay_capacity = j.value("replay_capacity", d.replay_capacity);
  c.env_step_budget = j.value("env_step_budget", d.env_step_budget);
  c.grad_steps_per_episode = j.value("grad_steps_per_episode", d.grad_steps_per_episode);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.eval_interval = j.value("eval_interval", d.eval_interval);
  c.eval_episodes = j.value("eval_episodes", d.eval_episodes);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.workers = j.value("workers", d.workers);
  c.use_experts = j.value("use_experts", d.use_experts);
  c.gamma_initial = j.value("gamma_initial", d.gamma_initial);
  c.gamma_decay_fraction = j.value("gamma_decay_fraction", d.gamma_decay_fraction);
  c.seed = j.value("seed", d.seed);
}

double gamma_at(const TrainConfig& cfg, long env_steps) {
  const double horizon = cfg.gamma_decay_fraction * static_cast<double>(cfg.env_step_budget);
  if (!(horizon > 0.0)) return 0.0;
  return cfg.gamma_initial * std::max(0.0, 1.0 - static_cast<double>(env_steps) / horizon);
}

LossTerms compute_loss(const ModelBundle& model, std::span<const ReplaySample> batch, const PosteriorConfig& pcfg,
                       const TrainConfig& tcfg, double discount, ModelBundle* grads) {
  if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
  const int J = tcfg.unroll;
  const int d = model.latent_dim();
  const int S = model.state_dim();
  const nn::GmmHead head = model.policy_head();
  const int H = head.size();
  const auto B = static_cast<Eigen::Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(B);
  const double rs = model.config().reward_scale;
  const double vs = model.config().value_scale;

  Matrix x(model.obs_dim(), B);
  std::vector<Matrix> z(static_cast<std::size_t>(J), Matrix::Zero(d, B));
  Matrix reward_target = Matrix::Zero(J, B);
  Matrix value_tgt = Matrix::Zero(J + 1, B);
  // Policy targets: per (k, b), the atoms and the improved policy over them (empty past the episode end).
  std::vector<std::vector<const ReplayEntry*>> policy_entry(static_cast<std::size_t>(J + 1),
                                                            std::vector<const ReplayEntry*>(static_cast<std::size_t>(B)));
  std::vector<std::vector<std::vector<double>>> policy_pi(static_cast<std::size_t>(J + 1),
                                                          std::vector<std::vector<double>>(static_cast<std::size_t>(B)));

  for (Eigen::Index b = 0; b < B; ++b) {
    const ReplaySample& sample = batch[static_cast<std::size_t>(b)];
    const Episode& ep = *sample.episode;
    const std::size_t t = sample.index;
    const Observation& o = ep.at(t).observation;
    if (static_cast<int>(o.size()) != model.obs_dim()) throw std::invalid_argument("compute_loss: observation size");
    x.col(b) = Eigen::Map<const Vector>(o.data(), static_cast<Eigen::Index>(o.size()));
    for (int k = 0; k <= J; ++k) {
      const std::size_t idx = t + static_cast<std::size_t>(k);
      if (idx >= ep.size()) break;
      const ReplayEntry& e = ep[idx];
      if (k < J) {
        z[static_cast<std::size_t>(k)].col(b) = e.search.atoms.at(static_cast<std::size_t>(e.chosen)).z;
        reward_target(k, b) = e.reward;
      }
      value_tgt(k, b) = value_target(ep, idx, tcfg.td_steps, discount);
      policy_entry[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)] = &e;
      policy_pi[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)] = improved_policy(e.search, pcfg);
    }
  }

  // Forward unroll.
  nn::MlpTape h_tape;
  std::vector<Matrix> states(static_cast<std::size_t>(J + 1));
  states[0] = model.h().forward(x, h_tape).array().tanh();
  std::vector<nn::MlpTape> g_tapes(static_cast<std::size_t>(J));
  std::vector<Matrix> g_out(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    Matrix in(S + d, B);
    in.topRows(S) = states[static_cast<std::size_t>(j)];
    in.bottomRows(d) = z[static_cast<std::size_t>(j)];
    g_out[static_cast<std::size_t>(j)] = model.g().forward(in, g_tapes[static_cast<std::size_t>(j)]);
    states[static_cast<std::size_t>(j + 1)] = g_out[static_cast<std::size_t>(j)].bottomRows(S).array().tanh();
  }
  std::vector<nn::MlpTape> f_tapes(static_cast<std::size_t>(J + 1));
  std::vector<Matrix> f_out(static_cast<std::size_t>(J + 1));
  for (int k = 0; k <= J; ++k)
    f_out[static_cast<std::size_t>(k)] = model.f().forward(states[static_cast<std::size_t>(k)], f_tapes[static_cast<std::size_t>(k)]);

  LossTerms terms;
  std::vector<Matrix> d_f(static_cast<std::size_t>(J + 1), Matrix::Zero(H + 1, B));
  std::vector<double> grad_atom(static_cast<std::size_t>(H));
  std::vector<double> logp;
  double policy_objective = 0.0;
  for (int k = 0; k <= J; ++k) {
    const Matrix& out = f_out[static_cast<std::size_t>(k)];
    Matrix& dk = d_f[static_cast<std::size_t>(k)];
    for (Eigen::Index b = 0; b < B; ++b) {
      const double err = out(H, b) - value_tgt(k, b) / vs;
      terms.loss_v += err * err * inv_b;
      dk(H, b) = 2.0 * err * inv_b;

      const ReplayEntry* e = policy_entry[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
      if (e == nullptr) continue;
      const auto& pi = policy_pi[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
      const std::span<const double> raw(out.col(b).data(), static_cast<std::size_t>(H));
      logp.assign(pi.size(), 0.0);
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < pi.size(); ++i) {
        const Vector& zi = e->search.atoms[i].z;
        std::fill(grad_atom.begin(), grad_atom.end(), 0.0);
        logp[i] = head.log_prob(raw, {zi.data(), static_cast<std::size_t>(zi.size())}, grad_atom);
        m = std::max(m, logp[i]);
        if (pi[i] != 0.0)
          for (int r = 0; r < H; ++r) dk(r, b) -= pi[i] * inv_b * grad_atom[static_cast<std::size_t>(r)];
      }
      double lse = 0.0;
      for (double l : logp) lse += std::exp(l - m);
      lse = m + std::log(lse);
      for (std::size_t i = 0; i < pi.size(); ++i) {
        terms.loss_p -= pi[i] * (logp[i] - lse) * inv_b;
        policy_objective -= pi[i] * logp[i] * inv_b;
      }
    }
  }
  for (int j = 0; j < J; ++j) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const double err = g_out[static_cast<std::size_t>(j)](0, b) - reward_target(j, b) / rs;
      terms.loss_r += err * err * inv_b;
    }
  }
  terms.objective = terms.loss_r + terms.loss_v + policy_objective;

  if (grads == nullptr) return terms;

  // Backward through the unroll.
  Matrix d_state = model.f().backward(f_tapes[static_cast<std::size_t>(J)], d_f[static_cast<std::size_t>(J)], &grads->f());
  for (int j = J - 1; j >= 0; --j) {
    const Matrix& next = states[static_cast<std::size_t>(j + 1)];
    Matrix d_g(S + 1, B);
    for (Eigen::Index b = 0; b < B; ++b)
      d_g(0, b) = 2.0 * (g_out[static_cast<std::size_t>(j)](0, b) - reward_target(j, b) / rs) * inv_b;
    d_g.bottomRows(S) = d_state.array() * (1.0 - next.array().square());
    const Matrix d_in = model.g().backward(g_tapes[static_cast<std::size_t>(j)], d_g, &grads->g());
    d_state = d_in.topRows(S) +
              model.f().backward(f_tapes[static_cast<std::size_t>(j)], d_f[static_cast<std::size_t>(j)], &grads->f());
  }
  const Matrix d_h = d_state.array() * (1.0 - states[0].array().square());
  model.h().backward(h_tape, d_h, &grads->h());
  return terms;
}

SelfPlayResult self_play_episode(DrivingEnv& env, const SkillModel& model, const std::vector<IntentEncoder>& experts,
                                 const SkillSpaceModel& skills, const SearchConfig& scfg, std::mt19937_64& rng,
                                 int max_skills) {
  SelfPlayResult out;
  while (!env.done() && (max_skills < 0 || static_cast<int>(out.entries.size()) < max_skills)) {
    ReplayEntry entry;
    entry.observation = env.observe();
    entry.search = run_search(entry.observation, model, experts, scfg, rng);
    entry.chosen = act(entry.search, scfg.temperature, rng);
    const Vector& z = entry.search.atoms[static_cast<std::size_t>(entry.chosen)].z;
    SkillExecution ex = execute_skill(env, skills, {z.data(), static_cast<std::size_t>(z.size())});
    entry.reward = ex.reward;
    entry.done = ex.done;
    for (const StepTrace& s : ex.log) entry.actions.push_back(s.action);
    out.trace.insert(out.trace.end(), ex.log.begin(), ex.log.end());
    out.metrics.total_return += ex.reward;
    out.entries.push_back(std::move(entry));
    if (ex.steps == 0) break;  // nothing executable; avoid spinning
  }
  out.metrics.success = env.cause() == TerminationCause::Success;
  out.metrics.completion = env.completion_ratio();
  out.metrics.env_steps = env.steps();
  out.metrics.skills = static_cast<int>(out.entries.size());
  out.metrics.cause = env.cause();
  return out;
}

EvalSummary evaluate(const ScenarioConfig& scenario, const SkillModel& model, const std::vector<IntentEncoder>& experts,
                     const SkillSpaceModel& skills, SearchConfig scfg, int episodes, std::uint64_t seed,
                     std::vector<std::vector<StepTrace>>* traces) {
  scfg.temperature = 0.0;
  EvalSummary summary;
  for (int i = 0; i < episodes; ++i) {
    DrivingEnv env(scenario);
    std::seed_seq env_seq{seed, std::uint64_t{0xE7A1}, static_cast<std::uint64_t>(i)};
    std::mt19937_64 env_rng(env_seq);
    env.reset(env_rng);
    std::seed_seq search_seq{seed, std::uint64_t{0x5EA7}, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(search_seq);
    SelfPlayResult r = self_play_episode(env, model, experts, skills, scfg, rng);
    summary.success_rate += r.metrics.success ? 1.0 : 0.0;
    summary.completion_ratio += r.metrics.completion;
    summary.mean_return += r.metrics.total_return;
    summary.episodes.push_back(r.metrics);
    if (traces != nullptr) traces->push_back(std::move(r.trace));
  }
  const double n = std::max(1, episodes);
  summary.success_rate /= n;
  summary.completion_ratio /= n;
  summary.mean_return /= n;
  return summary;
}

std::string format_metrics_row(const MetricsRow& r) {
  return fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6g},{:.6g},{:.6g},{:.6f},{:.6g}", r.step, r.episodes,
                     r.success_rate, r.completion_ratio, r.mean_return, r.loss_r, r.loss_v, r.loss_p, r.gamma,
                     r.lambda);
}

namespace {

void dump_batch(const std::filesystem::path& dir, std::span<const ReplaySample> batch) {
  if (dir.empty()) return;
  json out = json::array();
  for (const ReplaySample& s : batch) {
    const ReplayEntry& e = s.episode->at(s.index);
    out.push_back({{"index", s.index}, {"observation", e.observation}, {"reward", e.reward}, {"done", e.done},
                   {"chosen", e.chosen}, {"visits", e.search.visits}, {"root_value", e.search.root_value}});
  }
  std::ofstream(dir / "diverged_batch.json") << out.dump(1) << '\n';
}

}  // namespace

TrainOutput train_loop(const TrainInputs& in, const std::function<void(const MetricsRow&)>& on_row) {
  const TrainConfig& tc = in.train;
  tc.validate();
  in.search.validate();
  in.posterior.validate();
  in.scenario.validate();
  if (in.skills == nullptr) throw ConfigError("train_loop: a skill space is required");
  static const std::vector<IntentEncoder> kNoExperts;
  const std::vector<IntentEncoder>& experts = (tc.use_experts && in.experts != nullptr) ? *in.experts : kNoExperts;
  if (!experts.empty()) {
    in.posterior.weights_for(experts.size());
    for (const IntentEncoder& e : experts)
      if (e.latent_dim() != in.skills->latent_dim() || e.obs_dim() != obs::kDim)
        throw ConfigError("train_loop: intent encoder shapes do not match the skill space / observation");
  }

  TrainOutput out;
  out.model = in.initial_model != nullptr ? *in.initial_model
                                          : ModelBundle(obs::kDim, in.skills->latent_dim(), in.model, tc.seed);
  ModelBundle grads = out.model.zeros_like();
  nn::Adam adam({.learning_rate = tc.learning_rate, .weight_decay = tc.weight_decay});
  ReplayBuffer buffer(static_cast<std::size_t>(tc.replay_capacity));
  std::seed_seq train_seq{tc.seed, std::uint64_t{0x7EA1}};
  std::mt19937_64 train_rng(train_seq);

  std::ofstream csv;
  if (!in.out_dir.empty()) {
    std::filesystem::create_directories(in.out_dir);
    csv.open(in.out_dir / "metrics.csv");
    if (!csv) throw ConfigError("cannot write " + (in.out_dir / "metrics.csv").string());
    csv << "# emts seed=" << tc.seed << " scenario=" << to_string(in.scenario.scenario)
        << " use_experts=" << (tc.use_experts ? 1 : 0) << '\n'
        << kMetricsHeader << '\n';
  }

  auto search_cfg = [&](long steps) {
    SearchConfig s = in.search;
    s.gamma = tc.use_experts ? gamma_at(tc, steps) : 0.0;
    if (!tc.use_experts) s.alpha = 0.0;
    return s;
  };

  double sum_r = 0.0, sum_v = 0.0, sum_p = 0.0;
  long loss_count = 0;
  auto emit_row = [&](long label) {
    const SearchConfig s = search_cfg(out.env_steps);
    const EvalSummary ev = evaluate(in.scenario, out.model, experts, *in.skills, s, tc.eval_episodes, tc.seed);
    MetricsRow row;
    row.step = label;
    row.episodes = out.episodes;
    row.success_rate = ev.success_rate;
    row.completion_ratio = ev.completion_ratio;
    row.mean_return = ev.mean_return;
    if (loss_count > 0) {
      row.loss_r = sum_r / loss_count;
      row.loss_v = sum_v / loss_count;
      row.loss_p = sum_p / loss_count;
    }
    row.gamma = s.gamma;
    row.lambda = in.posterior.lambda;
    sum_r = sum_v = sum_p = 0.0;
    loss_count = 0;
    out.rows.push_back(row);
    if (csv.is_open()) csv << format_metrics_row(row) << '\n' << std::flush;
    log::info("train: step {} episodes {} success {:.2f} completion {:.3f} return {:.2f}", row.step, row.episodes,
              row.success_rate, row.completion_ratio, row.mean_return);
    if (on_row) on_row(row);
  };
  auto save = [&](const std::string& name) {
    if (in.out_dir.empty()) return;
    nn::save_checkpoint(in.out_dir / name,
                        out.model.to_checkpoint({{"seed", tc.seed}, {"env_steps", out.env_steps}, {"episodes", out.episodes}}));
  };

  emit_row(0);
  long next_eval = tc.eval_interval;
  long next_ckpt = tc.checkpoint_interval;
  const int W = tc.workers;
  std::vector<ReplaySample> batch;
  while (out.env_steps < tc.env_step_budget) {
    const SearchConfig scfg = search_cfg(out.env_steps);
    const ModelBundle snapshot = out.model;
    std::vector<SelfPlayResult> results(static_cast<std::size_t>(W));
    auto run = [&](int w) {
      const auto episode = static_cast<std::uint64_t>(out.episodes + w);
      DrivingEnv env(in.scenario);
      std::seed_seq env_seq{tc.seed, std::uint64_t{0xE1}, episode};
      std::mt19937_64 env_rng(env_seq);
      env.reset(env_rng);
      std::seed_seq search_seq{tc.seed, std::uint64_t{0x5E}, episode};
      std::mt19937_64 rng(search_seq);
      results[static_cast<std::size_t>(w)] = self_play_episode(env, snapshot, experts, *in.skills, scfg, rng);
    };
    if (W == 1) {
      run(0);
    } else {
      std::vector<std::jthread> pool;
      for (int w = 0; w < W; ++w) pool.emplace_back(run, w);
    }
    for (SelfPlayResult& r : results) {
      out.env_steps += r.metrics.env_steps;
      ++out.episodes;
      buffer.add(std::move(r.entries));
    }

    const int steps = W * tc.grad_steps_per_episode;
    for (int s = 0; s < steps && buffer.size() > 0; ++s) {
      batch = buffer.sample(static_cast<std::size_t>(tc.batch_size), train_rng);
      grads.set_zero();
      const LossTerms terms = compute_loss(out.model, batch, in.posterior, tc, in.search.discount, &grads);
      if (!std::isfinite(terms.objective)) {
        dump_batch(in.out_dir, batch);
        throw DivergenceError(fmt::format("training diverged at env step {} (loss_r {}, loss_v {}, loss_p {})",
                                          out.env_steps, terms.loss_r, terms.loss_v, terms.loss_p));
      }
      adam.step(out.model.parameter_spans(), std::as_const(grads).parameter_spans());
      ++out.grad_steps;
      sum_r += terms.loss_r;
      sum_v += terms.loss_v;
      sum_p += terms.loss_p;
      ++loss_count;
    }

    while (next_eval <= out.env_steps && next_eval <= tc.env_step_budget) {
      emit_row(next_eval);
      next_eval += tc.eval_interval;
    }
    while (next_ckpt <= out.env_steps) {
      save(fmt::format("model_{}.ckpt", next_ckpt));
      next_ckpt += tc.checkpoint_interval;
    }
  }
  save("model.ckpt");
  return out;
}

}  // namespace emts
