#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "emts/driving_env.hpp"
#include "emts/expert_intents.hpp"
#include "emts/skill_space.hpp"
#include "emts/world_model.hpp"

namespace emts {

struct SearchConfig {
  int num_atoms{20};  // K
  int num_simulations{100};
  double c1{1.25};
  double c2{19652.0};
  double alpha{0.3};  // probability of drawing a root atom from an expert
  double gamma{0.5};  // weight of the expert term in the root prior
  double discount{0.9043820750088044};  // 0.99^10, one edge spans a whole skill
  double temperature{1.0};               // acting temperature

  void validate() const;
};

void to_json(nlohmann::json& j, const SearchConfig& c);
void from_json(const nlohmann::json& j, SearchConfig& c);

inline constexpr int kModelSource = -1;

struct Atom {
  Vector z;
  int source{kModelSource};  // kModelSource or the index of the expert it came from
};

class MinMaxStats {
 public:
  void update(double q);
  /// (q - min) / (max - min) clamped to [0, 1]; 0 until two distinct values were seen.
  double normalize(double q) const;
  double min() const { return min_; }
  double max() const { return max_; }

 private:
  double min_{std::numeric_limits<double>::infinity()};
  double max_{-std::numeric_limits<double>::infinity()};
};

struct SearchNode {
  Vector hidden;
  double reward{0.0};  // predicted reward of the edge into this node
  double prior{0.0};   // adjusted prior of the edge into this node
  Vector z;            // skill on the edge into this node
  int source{kModelSource};
  int visits{0};
  double value_sum{0.0};
  std::vector<int> children;  // node indices
  bool expanded() const { return !children.empty(); }
  double value() const { return visits > 0 ? value_sum / visits : 0.0; }
};

/// Arena-allocated tree; node 0 is the root.
struct SearchTree {
  std::vector<SearchNode> nodes;
  MinMaxStats minmax;
  double discount{1.0};

  /// Edge value r + discount * W / N, defined for visited children.
  double q_value(const SearchNode& child) const { return child.reward + discount * child.value(); }
  nlohmann::json to_json() const;
};

struct SearchResult {
  std::vector<Atom> atoms;  // root atoms z_1..z_K
  std::vector<int> visits;
  std::vector<double> priors;                          // adjusted, renormalized
  std::vector<double> model_log_density;               // log f(z_k | s0)
  std::vector<std::vector<double>> expert_log_density;  // [expert][k] log pi_n(z_k | o)
  std::vector<double> q_values;                        // raw Q per atom, 0 when unvisited
  double root_value{0.0};

  int total_visits() const;
};

// Pure model path: what a search without experts does.

/// K independent draws from the policy.
std::vector<Atom> sample_model_atoms(const nn::GmmPolicy& policy, int k, std::mt19937_64& rng);
/// Model densities evaluated at the atoms and renormalized.
std::vector<double> normalized_model_prior(std::span<const double> model_log_density);

/// Root draws: each draw picks a uniformly chosen expert with probability alpha,
/// otherwise the model policy. alpha == 0 consumes the rng exactly like `sample_model_atoms`.
std::vector<Atom> sample_root_atoms(std::span<const double> observation, const nn::GmmPolicy& policy,
                                    const std::vector<IntentEncoder>& experts, const SearchConfig& cfg,
                                    std::mt19937_64& rng);

/// Prior over a node's atoms: gamma * max_n pi_n + (1 - gamma) * f at the root,
/// f elsewhere, then renormalized. `expert_log_density` is indexed [expert][k].
std::vector<double> adjusted_priors(std::span<const double> model_log_density,
                                    const std::vector<std::vector<double>>& expert_log_density, bool is_root,
                                    double gamma);

/// Selection score of one child.
double puct_score(const SearchTree& tree, const SearchNode& parent, const SearchNode& child, const SearchConfig& cfg);
/// Highest scoring child (position in parent.children), lowest position on ties.
int select_child(const SearchTree& tree, const SearchNode& parent, const SearchConfig& cfg);

struct SearchOptions {
  /// When set, these become the root atoms instead of sampling.
  const std::vector<Atom>* root_atoms{nullptr};
  /// Receives the finished tree.
  SearchTree* tree_out{nullptr};
};

/// One search from observation `o`. Expanding the root counts as the first simulation,
/// so the root children share num_simulations - 1 visits.
SearchResult run_search(std::span<const double> o, const SkillModel& model, const std::vector<IntentEncoder>& experts,
                        const SearchConfig& cfg, std::mt19937_64& rng, const SearchOptions& opts = {});

/// Index of the chosen root atom: visits^(1/temperature) sampling, argmax when
/// temperature <= 0. Throws std::invalid_argument when no atom was visited.
int act(const SearchResult& result, double temperature, std::mt19937_64& rng);

struct SkillExecution {
  double reward{0.0};  // undiscounted sum over executed steps
  int steps{0};
  bool done{false};
  TerminationCause cause{TerminationCause::None};
  std::vector<StepTrace> log;
};

/// Decodes z from the ego's current speed and steps through the actions until the
/// sequence ends or the episode terminates.
SkillExecution execute_skill(DrivingEnv& env, const SkillSpaceModel& skills, std::span<const double> z);

}  // namespace emts
