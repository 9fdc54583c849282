// Command-line driver for the whole pipeline.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "emts/config.hpp"
#include "emts/errors.hpp"
#include "emts/log.hpp"
#include "emts/nn/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emts;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

RunConfig load_or_default(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.workers) cfg.train.workers = *c.workers;
  cfg.validate();
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

json header(const std::string& kind, std::uint64_t seed, const json& extra = json::object()) {
  json h{{"kind", kind}, {"seed", seed}};
  h.update(extra);
  return h;
}

SkillSpaceModel load_skills(const std::string& path) {
  require_file(path, "skill checkpoint");
  return SkillSpaceModel::from_checkpoint(nn::load_checkpoint(path));
}

std::vector<IntentEncoder> load_intents(const std::string& path) {
  require_file(path, "intent checkpoint");
  return intents_from_checkpoint(nn::load_checkpoint(path));
}

ModelBundle load_model(const std::string& path) {
  require_file(path, "model checkpoint");
  return ModelBundle::from_checkpoint(nn::load_checkpoint(path));
}

int cmd_default_config(const std::string& out) {
  const json j = RunConfig{};
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    ensure_parent(out);
    save_run_config(out, RunConfig{});
  }
  return kExitOk;
}

int cmd_gen_library(const Common& c, const std::string& out) {
  RunConfig cfg = load_or_default(c);
  if (c.seed) cfg.library.seed = *c.seed;
  const TrajectoryLibrary lib = build_library(cfg.library, cfg.kinematics);
  ensure_parent(out);
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write " + out);
  lib.write_jsonl(f, header("library", cfg.library.seed, {{"config", cfg.library}, {"count", lib.size()}}));
  std::cout << fmt::format("wrote {} trajectories to {}\n", lib.size(), out);
  return kExitOk;
}

int cmd_train_skills(const Common& c, const std::string& library, const std::string& out) {
  RunConfig cfg = load_or_default(c);
  if (c.seed) cfg.skills.seed = *c.seed;
  require_file(library, "trajectory library");
  std::ifstream in(library);
  const TrajectoryLibrary lib = TrajectoryLibrary::read_jsonl(in, cfg.kinematics);
  if (lib.horizon() != cfg.horizon)
    throw ConfigError(fmt::format("library horizon {} differs from config horizon {}", lib.horizon(), cfg.horizon));
  const SkillTrainResult r = train_skill_space(lib, cfg.skills, cfg.kinematics.v_max);
  ensure_parent(out);
  nn::save_checkpoint(out, r.model.to_checkpoint({{"seed", cfg.skills.seed}, {"holdout_mse", r.holdout_mse}}));
  std::cout << fmt::format("held-out action MSE {:.6f}; wrote {}\n", r.holdout_mse, out);
  return kExitOk;
}

int cmd_gen_expert_data(const Common& c, const std::string& style_name, int episodes, int expert_id,
                        const std::string& out) {
  RunConfig cfg = load_or_default(c);
  ExpertStyle style;
  try {
    style = expert_style_from_string(style_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  ExpertDataConfig dc = cfg.expert_data_config();
  if (episodes > 0) dc.episodes = episodes;
  if (c.seed) dc.seed = *c.seed;
  if (expert_id < 0) {
    const auto styles = cfg.expert_styles();
    const auto it = std::find(styles.begin(), styles.end(), style);
    expert_id = it == styles.end() ? 0 : static_cast<int>(it - styles.begin());
  }
  const ExpertDataset data = generate_expert_data(style, expert_id, dc, cfg.train.workers);
  ensure_parent(out);
  data.write_jsonl(out, header("expert_data", dc.seed, {{"style", style_name}, {"scenario", dc.scenario}}));
  std::size_t steps = 0;
  int successes = 0;
  for (const auto& ep : data.episodes) {
    steps += ep.actions.size();
    successes += ep.cause == TerminationCause::Success ? 1 : 0;
  }
  std::cout << fmt::format("wrote {} episodes ({} steps, {} successful) to {}\n", data.episodes.size(), steps,
                           successes, out);
  return kExitOk;
}

int cmd_train_intents(const Common& c, const std::vector<std::string>& data_files, const std::string& skills_path,
                      const std::string& out) {
  RunConfig cfg = load_or_default(c);
  if (c.seed) cfg.intents.seed = *c.seed;
  const SkillSpaceModel skills = load_skills(skills_path);
  if (skills.horizon() != cfg.horizon || skills.latent_dim() != cfg.latent_dim)
    throw ConfigError("skill checkpoint does not match the config's horizon / latent_dim");
  std::vector<IntentEncoder> encoders;
  for (std::size_t i = 0; i < data_files.size(); ++i) {
    require_file(data_files[i], "expert data");
    ExpertDataset data = ExpertDataset::read_jsonl(data_files[i]);
    const auto segments = extract_segments(data, cfg.horizon, cfg.intents.stride);
    IntentTrainResult r =
        train_intent_encoder(segments, skills, cfg.intents, static_cast<int>(i), data.style);
    std::cout << fmt::format("expert {} ({}): {} segments, decoded-action MSE {:.6f}\n", i, data.style,
                             segments.size(), r.final_mse);
    encoders.push_back(std::move(r.encoder));
  }
  ensure_parent(out);
  nn::save_checkpoint(out, intents_to_checkpoint(encoders, {{"seed", cfg.intents.seed}}));
  std::cout << "wrote " << out << '\n';
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& out_dir, const std::string& skills_path,
              const std::string& intents_path, bool no_experts) {
  RunConfig cfg = load_or_default(c);
  if (c.seed) cfg.train.seed = *c.seed;
  if (no_experts) cfg.train.use_experts = false;
  if (out_dir.empty()) throw ConfigError("--out-dir is required");
  const SkillSpaceModel skills = load_skills(skills_path);
  std::vector<IntentEncoder> experts;
  if (cfg.train.use_experts) experts = load_intents(intents_path);

  TrainInputs in;
  in.scenario = cfg.scenario;
  in.search = cfg.search;
  in.posterior = cfg.posterior;
  in.train = cfg.train;
  in.model = cfg.model;
  in.skills = &skills;
  in.experts = &experts;
  in.out_dir = out_dir;
  fs::create_directories(out_dir);
  save_run_config(fs::path(out_dir) / "config.json", cfg);
  const TrainOutput r = train_loop(in, [](const MetricsRow& row) {
    std::cout << fmt::format("step {:>7}  episodes {:>5}  success {:.2f}  completion {:.3f}\n", row.step, row.episodes,
                             row.success_rate, row.completion_ratio)
              << std::flush;
  });
  std::cout << fmt::format("done: {} env steps, {} episodes, {} gradient steps\n", r.env_steps, r.episodes,
                           r.grad_steps);
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& skills_path, const std::string& intents_path,
             const std::string& scenario_name, int episodes, double gamma, const std::string& traces_dir,
             const std::string& out) {
  RunConfig cfg = load_or_default(c);
  std::uint64_t seed = c.seed.value_or(cfg.train.seed);
  ScenarioConfig sc = cfg.scenario;
  if (!scenario_name.empty()) {
    try {
      sc.scenario = scenario_from_string(scenario_name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  const ModelBundle model = load_model(ckpt);
  const SkillSpaceModel skills = load_skills(skills_path);
  std::vector<IntentEncoder> experts;
  if (!intents_path.empty()) experts = load_intents(intents_path);
  SearchConfig scfg = cfg.search;
  scfg.gamma = experts.empty() ? 0.0 : gamma;
  if (experts.empty()) scfg.alpha = 0.0;
  scfg.validate();

  std::vector<std::vector<StepTrace>> traces;
  const EvalSummary s = evaluate(sc, model, experts, skills, scfg, episodes, seed, traces_dir.empty() ? nullptr : &traces);

  std::ostringstream csv;
  csv << "# emts eval seed=" << seed << " scenario=" << to_string(sc.scenario) << '\n';
  csv << "episode,success,completion_ratio,return,env_steps,skills,cause\n";
  for (std::size_t i = 0; i < s.episodes.size(); ++i) {
    const EpisodeMetrics& m = s.episodes[i];
    csv << fmt::format("{},{},{:.6f},{:.6f},{},{},{}\n", i, m.success ? 1 : 0, m.completion, m.total_return,
                       m.env_steps, m.skills, to_string(m.cause));
  }
  csv << fmt::format("mean,{:.6f},{:.6f},{:.6f},,,\n", s.success_rate, s.completion_ratio, s.mean_return);
  if (out.empty() || out == "-") {
    std::cout << csv.str();
  } else {
    ensure_parent(out);
    std::ofstream(out) << csv.str();
  }
  if (!traces_dir.empty()) {
    fs::create_directories(traces_dir);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      std::ofstream f(fs::path(traces_dir) / fmt::format("episode_{:03}.jsonl", i));
      f << json{{"emts_header", header("trace", seed, {{"episode", i}, {"scenario", sc}})}}.dump() << '\n';
      for (const StepTrace& t : traces[i]) f << trace_to_json(t).dump() << '\n';
    }
  }
  return kExitOk;
}

int cmd_search_debug(const Common& c, const std::string& obs_path, const std::string& ckpt,
                     const std::string& intents_path, int sims, const std::string& dump) {
  RunConfig cfg = load_or_default(c);
  require_file(obs_path, "observation fixture");
  std::ifstream in(obs_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(obs_path + ": " + e.what());
  }
  const Observation o = j.is_array() ? j.get<Observation>() : j.at("observation").get<Observation>();
  if (o.size() != static_cast<std::size_t>(obs::kDim))
    throw ConfigError(fmt::format("observation fixture has {} features, expected {}", o.size(), obs::kDim));
  const ModelBundle model = load_model(ckpt);
  std::vector<IntentEncoder> experts;
  if (!intents_path.empty()) experts = load_intents(intents_path);
  SearchConfig scfg = cfg.search;
  if (sims > 0) scfg.num_simulations = sims;
  if (experts.empty()) scfg.alpha = scfg.gamma = 0.0;
  scfg.validate();

  std::mt19937_64 rng(c.seed.value_or(cfg.train.seed));
  SearchTree tree;
  SearchOptions opts;
  opts.tree_out = &tree;
  const SearchResult r = run_search(o, model, experts, scfg, rng, opts);
  json outj = tree.to_json();
  outj["emts_header"] = header("search_debug", c.seed.value_or(cfg.train.seed), {{"num_simulations", scfg.num_simulations}});
  outj["root_value"] = r.root_value;
  outj["visits"] = r.visits;
  outj["priors"] = r.priors;
  if (dump.empty() || dump == "-") {
    std::cout << outj.dump(2) << '\n';
  } else {
    ensure_parent(dump);
    std::ofstream(dump) << outj.dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emts: skill-level tree search with expert intentions for driving"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run configuration (JSON)");
    sub->add_option("--seed", common.seed, "Override the stage's seed");
    sub->add_option("--workers", common.workers, "Worker threads");
  };

  std::string out, out_dir, library, skills, intents, style, scenario, traces, obs_path, ckpt, dump;
  std::vector<std::string> data_files;
  int expert_episodes = 0, eval_episodes = 10, expert_id = -1, sims = 0;
  double eval_gamma = 0.0;
  bool no_experts = false;

  auto* def = app.add_subcommand("default-config", "Print or write the full default configuration");
  def->add_option("--out", out, "Output file (stdout when omitted)");

  auto* gl = app.add_subcommand("gen-library", "Generate the motion-primitive trajectory library");
  add_common(gl);
  gl->add_option("--out", out, "Output JSON-lines file")->required();

  auto* ts = app.add_subcommand("train-skills", "Train the skill encoder/decoder on a library");
  add_common(ts);
  ts->add_option("--library", library, "Trajectory library (JSON-lines)")->required();
  ts->add_option("--out", out, "Output checkpoint")->required();

  auto* ged = app.add_subcommand("gen-expert-data", "Record scripted-expert demonstrations");
  add_common(ged);
  ged->add_option("--style", style, "cautious | assertive | lane_keeper")->required();
  ged->add_option("--episodes", expert_episodes, "Episode count (config value when omitted)");
  ged->add_option("--expert-id", expert_id, "Expert index (position in experts.styles when omitted)");
  ged->add_option("--out", out, "Output JSON-lines file")->required();

  auto* ti = app.add_subcommand("train-intents", "Train one intent encoder per expert data file");
  add_common(ti);
  ti->add_option("--data", data_files, "Expert data files, one per expert")->required();
  ti->add_option("--skills", skills, "Skill checkpoint")->required();
  ti->add_option("--out", out, "Output checkpoint")->required();

  auto* tr = app.add_subcommand("train", "Self-play training of the world model");
  add_common(tr);
  tr->add_option("--out-dir", out_dir, "Directory for metrics.csv and checkpoints")->required();
  tr->add_option("--skills", skills, "Skill checkpoint")->required();
  tr->add_option("--intents", intents, "Intent checkpoint (required unless --no-experts)");
  tr->add_flag("--no-experts", no_experts, "Plain sampled search without expert guidance");

  auto* ev = app.add_subcommand("eval", "Greedy evaluation episodes");
  add_common(ev);
  ev->add_option("--ckpt", ckpt, "World-model checkpoint")->required();
  ev->add_option("--skills", skills, "Skill checkpoint")->required();
  ev->add_option("--intents", intents, "Intent checkpoint (optional)");
  ev->add_option("--scenario", scenario, "corridor | highway | intersection | roundabout");
  ev->add_option("--episodes", eval_episodes, "Episode count")->capture_default_str();
  ev->add_option("--gamma", eval_gamma, "Expert weight in the root prior (the end-of-training value, 0, by default)");
  ev->add_option("--traces", traces, "Directory for per-episode JSON-lines traces");
  ev->add_option("--out", out, "Summary CSV (stdout when omitted)");

  auto* sd = app.add_subcommand("search-debug", "Run one search and dump the tree as JSON");
  add_common(sd);
  sd->add_option("--obs", obs_path, "Observation fixture (JSON array or {\"observation\": [...]})")->required();
  sd->add_option("--ckpt", ckpt, "World-model checkpoint")->required();
  sd->add_option("--intents", intents, "Intent checkpoint (optional)");
  sd->add_option("--sims", sims, "Simulation count (config value when omitted)");
  sd->add_option("--dump", dump, "Output JSON file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*def) return cmd_default_config(out);
    if (*gl) return cmd_gen_library(common, out);
    if (*ts) return cmd_train_skills(common, library, out);
    if (*ged) return cmd_gen_expert_data(common, style, expert_episodes, expert_id, out);
    if (*ti) return cmd_train_intents(common, data_files, skills, out);
    if (*tr) return cmd_train(common, out_dir, skills, intents, no_experts);
    if (*ev) return cmd_eval(common, ckpt, skills, intents, scenario, eval_episodes, eval_gamma, traces, out);
    if (*sd) return cmd_search_debug(common, obs_path, ckpt, intents, sims, dump);
  } catch (const ConfigError& e) {
    std::cerr << "emts: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "emts: aborted: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
