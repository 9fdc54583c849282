#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "emts/config.hpp"
#include "emts/errors.hpp"
#include "emts/nn/checkpoint.hpp"

namespace emts {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code{-1};
  std::string output;  // stdout and stderr together
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(EMTS_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emts_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const fs::path kFixtures{EMTS_FIXTURE_DIR};

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.search.num_atoms = 7;
  c.train.seed = 99;
  c.posterior.expert_weights = {0.2, 0.3, 0.5};
  c.scenario.scenario = Scenario::Roundabout;
  const nlohmann::json j = c;
  const RunConfig back = run_config_from_json(j);
  EXPECT_EQ(nlohmann::json(back), j);

  const fs::path dir = scratch("roundtrip");
  save_run_config(dir / "c.json", c);
  EXPECT_EQ(nlohmann::json(load_run_config(dir / "c.json")), j);
  fs::remove_all(dir);
}

TEST(RunConfig, CrossFieldValidation) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.library.horizon = 12;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.skills.latent_dim = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.observation_dim = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.experts.styles = {"reckless"};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/emts.json"), ConfigError);
}

TEST(RunConfig, SearchAndModelDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.search.num_atoms, 20);
  EXPECT_EQ(c.search.num_simulations, 100);
  EXPECT_EQ(c.horizon, 10);
  EXPECT_EQ(c.experts.styles.size(), 3u);
  EXPECT_EQ(c.model.components, 3);
}

TEST(Cli, DefaultConfigParses) {
  const RunResult r = run_cli("default-config");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(nlohmann::json(run_config_from_json(nlohmann::json::parse(r.output))), nlohmann::json(RunConfig{}));
}

TEST(Cli, InvalidConfigIsConfigError) {
  const fs::path dir = scratch("bad_k");
  RunConfig c;
  nlohmann::json j = c;
  j["search"]["num_atoms"] = 1;
  std::ofstream(dir / "bad.json") << j.dump();
  const RunResult r = run_cli("gen-library --config " + (dir / "bad.json").string() + " --out " + (dir / "lib.jsonl").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("num_atoms"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find(">= 2"), std::string::npos) << r.output;
  fs::remove_all(dir);
}

TEST(Cli, MissingInputNamesThePath) {
  const RunResult r = run_cli("train-skills --library /nonexistent/lib.jsonl --out /tmp/emts_never.ckpt");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("/nonexistent/lib.jsonl"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("no-such-stage").code, 2);
  EXPECT_EQ(run_cli("eval --skills x").code, 2);
}

TEST(Cli, CorruptCheckpointIsConfigError) {
  const fs::path dir = scratch("corrupt");
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  const RunResult r = run_cli("eval --ckpt " + (dir / "bad.ckpt").string() + " --skills " + (dir / "bad.ckpt").string());
  EXPECT_EQ(r.code, 2) << r.output;
  fs::remove_all(dir);
}

TEST(Cli, GenLibraryWritesHeaderWithSeed) {
  const fs::path dir = scratch("genlib");
  const RunResult r = run_cli("gen-library --seed 5 --out " + (dir / "lib.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream f(dir / "lib.jsonl");
  std::string first;
  std::getline(f, first);
  EXPECT_EQ(nlohmann::json::parse(first).at("emts_header").at("seed"), 5);
  fs::remove_all(dir);
}

// Regenerate with EMTS_UPDATE_GOLDEN=1 after an intentional behaviour change.
TEST(Cli, EvalMatchesGoldenFile) {
  const fs::path model = kFixtures / "tiny_model.ckpt";
  const fs::path skills = kFixtures / "tiny_skills.ckpt";
  const fs::path config = kFixtures / "tiny_run.json";
  const fs::path golden = kFixtures / "eval_golden.csv";
  if (std::getenv("EMTS_UPDATE_GOLDEN") != nullptr) {
    RunConfig c;
    c.latent_dim = 3;
    c.skills.latent_dim = 3;
    c.search.num_atoms = 4;
    c.search.num_simulations = 8;
    c.model.state_dim = 8;
    c.model.hidden = 16;
    save_run_config(config, c);
    nn::save_checkpoint(model, ModelBundle(obs::kDim, 3, c.model, 1).to_checkpoint());
    nn::save_checkpoint(skills, SkillSpaceModel(10, 3, 16, 1).to_checkpoint());
    const RunResult gen = run_cli("eval --config " + config.string() + " --ckpt " + model.string() + " --skills " +
                                  skills.string() + " --episodes 3 --seed 4 --out " + golden.string());
    ASSERT_EQ(gen.code, 0) << gen.output;
  }
  const fs::path dir = scratch("golden");
  const RunResult r = run_cli("eval --config " + config.string() + " --ckpt " + model.string() + " --skills " +
                              skills.string() + " --episodes 3 --seed 4 --out " + (dir / "eval.csv").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(dir / "eval.csv"), slurp(golden));
  fs::remove_all(dir);
}

TEST(Cli, SearchDebugDumpsTree) {
  const fs::path dir = scratch("search_debug");
  const RunResult r = run_cli("search-debug --config " + (kFixtures / "tiny_run.json").string() + " --obs " +
                              (kFixtures / "probe_observation.json").string() + " --ckpt " +
                              (kFixtures / "tiny_model.ckpt").string() + " --sims 8 --dump " +
                              (dir / "tree.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto tree = nlohmann::json::parse(slurp(dir / "tree.json"));
  EXPECT_EQ(tree.at("nodes").at(0).at("visits"), 8);
  EXPECT_EQ(tree.at("visits").size(), 4u);
  EXPECT_EQ(tree.at("nodes").size(), 1u + 8u * 4u);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace emts
